"""PU datasets: synthesis under SCAR, synthetic generators, CSV I/O, minibatching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import CompositionError, ConfigError, ContractError, DegenerateInputError, ParseError, SchemaError
from .rng import make_rng

Ratio = tuple[int, int]


def parse_ratio(value) -> Ratio:
    """Accept ``"1:10"``, ``(1, 10)`` or ``[1, 10]``."""
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigError(f"ratio must look like 'P:N', got {value!r}")
        try:
            p, q = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"ratio must look like 'P:N', got {value!r}") from None
    else:
        try:
            p, q = (int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"cannot read ratio from {value!r}") from None
    if p < 0 or q < 0 or p + q == 0:
        raise ConfigError(f"invalid ratio {p}:{q}")
    return p, q


def format_ratio(r: Ratio) -> str:
    return f"{r[0]}:{r[1]}"


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    class_ids: np.ndarray
    classes: tuple = ()
    name: str = "dataset"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        ids = np.asarray(self.class_ids, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ContractError(f"features must be a non-empty n x d matrix, got shape {x.shape}")
        if ids.shape != (x.shape[0],):
            raise ContractError("class_ids must have one entry per row")
        classes = tuple(sorted(set(self.classes))) if self.classes else tuple(int(c) for c in np.unique(ids))
        if not set(np.unique(ids).tolist()) <= set(classes):
            raise ContractError("class_ids reference undeclared classes")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "classes", classes)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class PUDataset:
    """Features with PU flags ``s`` (1 = labeled positive) and optional true labels in {+1, -1}."""

    features: np.ndarray
    s: np.ndarray
    y_true: Optional[np.ndarray] = None
    pi_true: Optional[float] = None
    c: Optional[float] = None
    name: str = "pu"
    class_ids: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ContractError(f"features must be a non-empty n x d matrix, got shape {x.shape}")
        s = np.asarray(self.s).astype(np.int64).reshape(-1)
        if s.shape != (x.shape[0],):
            raise ContractError("s must have one entry per row")
        if not np.all((s == 0) | (s == 1)):
            raise SchemaError("s must take values in {0, 1}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "s", s)
        if self.c is not None and not 0 < self.c <= 1:
            raise ContractError(f"label frequency c must lie in (0, 1], got {self.c}")
        if self.y_true is not None:
            y = np.asarray(self.y_true).astype(np.int64).reshape(-1)
            if y.shape != s.shape:
                raise ContractError("y_true must have one entry per row")
            if not np.all((y == 1) | (y == -1)):
                raise SchemaError("y_true must take values in {-1, +1}")
            if np.any(y[s == 1] != 1):
                raise ContractError("labeled samples must be true positives")
            object.__setattr__(self, "y_true", y)
            pi = prior_of_unlabeled(s, y)
            if self.pi_true is not None and pi is not None and abs(self.pi_true - pi) > 1e-12:
                raise ContractError(f"pi_true {self.pi_true} disagrees with labels ({pi})")
            object.__setattr__(self, "pi_true", pi)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.y_true is not None

    @property
    def n_labeled(self) -> int:
        return int(self.s.sum())

    @property
    def n_unlabeled(self) -> int:
        return self.n - self.n_labeled

    def counts(self) -> dict:
        out = {"labeled": self.n_labeled, "unlabeled": self.n_unlabeled}
        if self.y_true is not None:
            unl = self.s == 0
            out["unlabeled_pos"] = int(np.sum(unl & (self.y_true == 1)))
            out["unlabeled_neg"] = int(np.sum(unl & (self.y_true == -1)))
            out["positives"] = int(np.sum(self.y_true == 1))
            out["negatives"] = int(np.sum(self.y_true == -1))
        return out


def prior_of_unlabeled(s: np.ndarray, y: np.ndarray) -> Optional[float]:
    unl = s == 0
    n_unl = int(unl.sum())
    if n_unl == 0:
        return None
    return float(np.sum(unl & (y == 1))) / n_unl


@dataclass(frozen=True)
class SplitSpec:
    positive_class_ids: frozenset
    label_frequency: float
    target_pn_ratio: Optional[Ratio] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "positive_class_ids", frozenset(int(c) for c in self.positive_class_ids))
        if self.target_pn_ratio is not None:
            object.__setattr__(self, "target_pn_ratio", parse_ratio(self.target_pn_ratio))
        if not self.positive_class_ids:
            raise ConfigError("positive_class_ids must not be empty")
        if self.label_frequency <= 0:
            raise DegenerateInputError(f"no labeled positives: label frequency c={self.label_frequency}")
        if self.label_frequency > 1:
            raise ConfigError(f"label frequency c must be at most 1, got {self.label_frequency}")


def scar_label_split(src: LabeledDataset, spec: SplitSpec) -> PUDataset:
    """Binarize, downsample positives to the target ratio, then label exactly round(c * n_pos) of them."""
    pos_set = spec.positive_class_ids
    if not pos_set <= set(src.classes):
        raise ConfigError(f"positive classes {sorted(pos_set)} not in dataset classes")
    if pos_set == set(src.classes):
        raise ConfigError("positive classes must be a strict subset of the class set")
    rng = make_rng(spec.seed, "scar_label_split")
    is_pos = np.isin(src.class_ids, sorted(pos_set))
    pos_idx = np.flatnonzero(is_pos)
    neg_idx = np.flatnonzero(~is_pos)
    if spec.target_pn_ratio is not None:
        p, q = spec.target_pn_ratio
        if q == 0:
            raise ConfigError("target ratio must include negatives")
        target = round(Fraction(len(neg_idx)) * p / q)
        if target > len(pos_idx):
            raise ConfigError(
                f"ratio {p}:{q} unachievable: needs {target} positives, only {len(pos_idx)} available"
            )
        kept = np.sort(rng.choice(pos_idx, size=target, replace=False)) if target < len(pos_idx) else pos_idx
    else:
        kept = pos_idx
    n_lab = round(spec.label_frequency * len(kept))
    if n_lab < 1:
        raise DegenerateInputError(
            f"no labeled positives: c={spec.label_frequency} of {len(kept)} positives rounds to zero"
        )
    labeled = rng.choice(kept, size=n_lab, replace=False)
    rows = np.sort(np.concatenate([kept, neg_idx]))
    s_full = np.zeros(src.n, dtype=np.int64)
    s_full[labeled] = 1
    y_full = np.where(is_pos, 1, -1)
    return PUDataset(
        features=src.features[rows],
        s=s_full[rows],
        y_true=y_full[rows],
        c=spec.label_frequency,
        name=f"{src.name}-pu",
        class_ids=src.class_ids[rows],
    )


def binarize(src: LabeledDataset, positive_class_ids) -> PUDataset:
    """Fully unlabeled view of a labeled set; used for test splits."""
    pos = np.isin(src.class_ids, sorted(int(c) for c in positive_class_ids))
    return PUDataset(
        features=src.features,
        s=np.zeros(src.n, dtype=np.int64),
        y_true=np.where(pos, 1, -1),
        name=f"{src.name}-test",
        class_ids=src.class_ids,
    )


# ---------------------------------------------------------------------------
# generators


def gaussian_mixture(n: int, d: int, pn_ratio, class_separation: float, seed: int, name: str = "gmm") -> LabeledDataset:
    """Two unit-covariance Gaussians at +-separation/2 along the first axis.

    Class 1 is the positive cluster, class 0 the negative one.
    """
    if n < 2 or d < 1:
        raise ConfigError("need n >= 2 and d >= 1")
    if not class_separation > 0:
        raise ConfigError("class separation must be positive")
    p, q = parse_ratio(pn_ratio)
    n_pos = round(Fraction(n) * p / (p + q))
    n_neg = n - n_pos
    if n_pos < 1 or n_neg < 1:
        raise ConfigError(f"ratio {p}:{q} with n={n} leaves a class empty")
    rng = make_rng(seed, "gaussian_mixture")
    x = rng.standard_normal((n, d))
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64), np.zeros(n_neg, dtype=np.int64)])
    order = rng.permutation(n)
    labels = labels[order]
    x[:, 0] += np.where(labels == 1, class_separation / 2.0, -class_separation / 2.0)
    return LabeledDataset(x, labels, classes=(0, 1), name=name)


def class_mixture(class_sizes: Sequence[int], d: int, separation: float, seed: int, name: str = "mixture") -> LabeledDataset:
    """One unit-covariance Gaussian per class, centers at distance ``separation`` from the origin."""
    sizes = [int(k) for k in class_sizes]
    if not sizes or min(sizes) < 1:
        raise ConfigError("every class needs at least one sample")
    rng = make_rng(seed, "class_mixture")
    centers = rng.standard_normal((len(sizes), d))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    x = rng.standard_normal((len(labels), d)) + centers[labels]
    order = rng.permutation(len(labels))
    return LabeledDataset(x[order], labels[order], classes=tuple(range(len(sizes))), name=name)


# CIFAR-10 vehicle classes: airplane, automobile, ship, truck.
CIFAR10_POSITIVE = (0, 1, 8, 9)
# Two CIFAR-100 super classes of five fine classes each.
CIFAR100_POSITIVE = tuple(range(10))


def cifar10_shaped(d: int = 8, separation: float = 3.0, seed: int = 0, train: bool = True) -> LabeledDataset:
    per_class = 5000 if train else 1000
    return class_mixture([per_class] * 10, d, separation, seed, name="cifar10-shaped")


def cifar100_shaped(d: int = 8, separation: float = 3.0, seed: int = 0, train: bool = True) -> LabeledDataset:
    per_class = 500 if train else 100
    return class_mixture([per_class] * 100, d, separation, seed, name="cifar100-shaped")


# ---------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_dataset(data: Union[LabeledDataset, PUDataset], path) -> None:
    path = Path(path)
    header = [f"f{j}" for j in range(data.d)]
    if isinstance(data, PUDataset):
        header.append("s")
        if data.y_true is not None:
            header.append("y")
    else:
        header.append("class")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [_fmt(v) for v in data.features[i]]
            if isinstance(data, PUDataset):
                row.append(str(int(data.s[i])))
                if data.y_true is not None:
                    row.append(str(int(data.y_true[i])))
            else:
                row.append(str(int(data.class_ids[i])))
            w.writerow(row)


def load_dataset(path, format: str = "pu") -> Union[LabeledDataset, PUDataset]:
    """Read a dataset CSV. ``format`` is ``"pu"``, ``"labeled"`` or ``"auto"``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        feat_cols = [h for h in header if h.startswith("f") and h[1:].isdigit()]
        if feat_cols != [f"f{j}" for j in range(len(feat_cols))] or header[: len(feat_cols)] != feat_cols:
            raise SchemaError(f"{path}: feature columns must be f0..f(d-1) in order, got {header}")
        if not feat_cols:
            raise SchemaError(f"{path}: no feature columns")
        extra = header[len(feat_cols):]
        if format == "auto":
            format = "labeled" if extra == ["class"] else "pu"
        if format == "pu":
            if "s" not in extra:
                raise SchemaError(f"{path}: missing 's' column")
            if extra not in (["s"], ["s", "y"]):
                raise SchemaError(f"{path}: unexpected columns {extra}")
        elif format == "labeled":
            if extra != ["class"]:
                raise SchemaError(f"{path}: labeled data needs a single 'class' column, got {extra}")
        else:
            raise ConfigError(f"unknown dataset format {format!r}")
        d = len(feat_cols)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:d]] + [int(v) for v in row[d:]])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in rows[-1][:d]):
                raise ParseError(f"{path}:{lineno}: non-finite feature value")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    arr = np.array([r[:d] for r in rows], dtype=np.float64)
    tail = np.array([r[d:] for r in rows], dtype=np.int64)
    name = path.stem
    if format == "labeled":
        return LabeledDataset(arr, tail[:, 0], name=name)
    s = tail[:, 0]
    if not np.all((s == 0) | (s == 1)):
        bad = int(np.flatnonzero((s != 0) & (s != 1))[0]) + 2
        raise SchemaError(f"{path}:{bad}: s must be 0 or 1")
    y = None
    if tail.shape[1] == 2:
        y = tail[:, 1]
        if not np.all((y == 1) | (y == -1)):
            bad = int(np.flatnonzero((y != 1) & (y != -1))[0]) + 2
            raise SchemaError(f"{path}:{bad}: y must be -1 or +1")
    return PUDataset(arr, s, y, name=name)


# ---------------------------------------------------------------------------
# minibatches


def sample_minibatch(data: PUDataset, batch_size: int, rng: np.random.Generator, require_both_kinds: bool = False,
                     max_tries: int = 10_000) -> np.ndarray:
    """Uniform sample of row indices without replacement.

    With ``require_both_kinds`` the draw is repeated until the batch holds at
    least one labeled positive and one unlabeled sample.
    """
    if not 1 <= batch_size <= data.n:
        raise ConfigError(f"batch size {batch_size} not in [1, {data.n}]")
    if require_both_kinds:
        if data.n_labeled == 0 or data.n_unlabeled == 0:
            raise CompositionError("dataset lacks labeled positives or unlabeled samples")
        if batch_size < 2:
            raise CompositionError("a batch of one cannot hold both kinds")
    for _ in range(max_tries):
        idx = rng.choice(data.n, size=batch_size, replace=False)
        if not require_both_kinds:
            return idx
        k = int(data.s[idx].sum())
        if 0 < k < batch_size:
            return idx
    raise CompositionError(f"no batch with both kinds found in {max_tries} draws")


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 1) -> list[np.ndarray]:
    """One pass over ``n`` rows in a fresh permutation; a trailing batch below ``min_size`` is dropped."""
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if len(b) >= min_size]
