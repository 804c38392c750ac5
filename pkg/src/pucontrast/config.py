"""Experiment configuration files and run manifests.

A config is a JSON object with the sections ``data``, ``pretrain``,
``classifier`` and ``sweep`` plus top-level ``seed`` and ``out``. Every key is
optional; unknown keys are rejected. Section seeds are never read from the
file: they are derived from the top-level seed, so one integer fixes every
random stream of a run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .augment import AugmentationPolicy
from .errors import ConfigError, IntegrityError
from .losses import ContrastiveConfig
from .rng import RNG_ALGORITHM, child_seed
from .training import ClassifierConfig, PretrainConfig, config_digest

GENERATORS = ("gaussian_mixture", "cifar10_shaped", "cifar100_shaped")
DEFAULT_POSITIVES = {"gaussian_mixture": [1], "cifar10_shaped": [0, 1, 8, 9], "cifar100_shaped": list(range(10))}


@dataclass(frozen=True)
class DataSection:
    generator: str = "gaussian_mixture"
    n: int = 5500
    d: int = 16
    pn_ratio: str = "1:10"
    separation: float = 2.5
    test_n: int = 2000
    test_pn_ratio: str = "1:1"
    positive_class_ids: Optional[list] = None
    label_frequency: float = 0.2
    target_pn_ratio: Optional[str] = None

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; choose from {', '.join(GENERATORS)}")
        if self.positive_class_ids is None:
            object.__setattr__(self, "positive_class_ids", list(DEFAULT_POSITIVES[self.generator]))
        else:
            object.__setattr__(self, "positive_class_ids", sorted(int(c) for c in self.positive_class_ids))


@dataclass(frozen=True)
class SweepSection:
    factors: tuple = (0.1, 0.5, 1.0, 2.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(float(b) for b in self.factors))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "run"
    data: DataSection = field(default_factory=DataSection)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    sweep: SweepSection = field(default_factory=SweepSection)

    def stream_seed(self, stream: str) -> int:
        return child_seed(self.seed, stream)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "data": asdict(self.data),
            "pretrain": self.pretrain.to_dict(),
            "classifier": self.classifier.to_dict(),
            "sweep": {"factors": list(self.sweep.factors)},
        }

    def digest(self) -> str:
        return config_digest(self.to_dict())


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"config section {section!r}: unknown keys {unknown}")


def _build(cls, section: str, values: dict, exclude=("seed",)):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    names = [f.name for f in fields(cls) if f.name not in exclude]
    _check_keys(section, values, names)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"config section {section!r}: {exc}") from None


def _pretrain_section(values: dict, seed: int) -> PretrainConfig:
    values = dict(values)
    contrastive_keys = ("tau", "tau_plus", "views")
    contrastive = {k: values.pop(k) for k in contrastive_keys if k in values}
    aug = values.pop("augmentation", None)
    base = _build(PretrainConfig, "pretrain", values, exclude=("seed", "contrastive", "augmentation"))
    return replace(
        base,
        seed=seed,
        contrastive=ContrastiveConfig(**contrastive),
        augmentation=AugmentationPolicy.from_list(aug) if aug is not None else base.augmentation,
    )


def _flatten_pretrain(d: dict) -> dict:
    """Inverse of the nesting in ``PretrainConfig.to_dict`` for re-reading resolved configs."""
    d = dict(d)
    c = d.pop("contrastive", None)
    if isinstance(c, dict):
        d.update(c)
    return d


def from_dict(doc: dict, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a config from a parsed JSON document and ``section.key`` overrides."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = json.loads(json.dumps(doc))
    _check_keys("<top>", doc, ("seed", "out", "data", "pretrain", "classifier", "sweep"))
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in dotted:
            sec, key = dotted.split(".", 1)
            doc.setdefault(sec, {})[key] = value
        else:
            doc[dotted] = value
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    pre = _flatten_pretrain(doc.get("pretrain", {}))
    pre.pop("seed", None)
    clf = dict(doc.get("classifier", {}))
    clf.pop("seed", None)
    try:
        return ExperimentConfig(
            seed=seed,
            out=str(doc.get("out", "run")),
            data=_build(DataSection, "data", doc.get("data", {}), exclude=()),
            pretrain=_pretrain_section(pre, child_seed(seed, "pretrain")),
            classifier=replace(_build(ClassifierConfig, "classifier", clf), seed=child_seed(seed, "classifier")),
            sweep=_build(SweepSection, "sweep", doc.get("sweep", {}), exclude=()),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> ExperimentConfig:
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(doc, overrides)


# ---------------------------------------------------------------------------
# manifests


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    config_digest: str
    outputs: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    rng_algorithm: str = RNG_ALGORITHM
    tool: str = "pucontrast"
    version: str = __version__

    def add_output(self, name: str, path) -> None:
        self.outputs[name] = {"path": str(path), "sha256": file_sha256(path)}

    def add_input(self, name: str, path) -> None:
        self.inputs[name] = {"path": str(path), "sha256": file_sha256(path)}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: invalid manifest ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("tool") != "pucontrast":
        raise IntegrityError(f"{path}: not a run manifest")
    return doc


def verify_manifest(path) -> list[str]:
    """Problems found when recomputing the config digest and file hashes; empty when consistent."""
    doc = read_manifest(path)
    problems = []
    if config_digest(doc.get("config")) != doc.get("config_digest"):
        problems.append("config digest mismatch")
    for group in ("inputs", "outputs"):
        for name, entry in doc.get(group, {}).items():
            p = Path(entry["path"])
            if not p.exists():
                problems.append(f"{group[:-1]} {name} missing: {p}")
            elif file_sha256(p) != entry["sha256"]:
                problems.append(f"{group[:-1]} {name} changed: {p}")
    return problems
