"""Encoder, projector and linear PU classifier, plus checkpoint files.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer is
``h @ W + b``. The two-logit classifier keeps the usual ``(2, d)`` layout
with rows ``u`` (positive class) and ``v`` (negative class).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, IntegrityError, KindError, UnsupportedVersionError
from .rng import make_rng

CHECKPOINT_FORMAT = "pucontrast-checkpoint"
CHECKPOINT_VERSION = 1


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


@dataclass(eq=False)
class MLP:
    """Fully connected network; relu between layers, identity on the last one.

    ``kind`` is ``"encoder"`` or ``"projector"``; projectors L2-normalize their output.
    """

    kind: str
    sizes: tuple
    params: dict
    normalize_output: bool = False
    bias: bool = True
    provenance: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def with_arrays(self, arrays: dict[str, np.ndarray], **provenance) -> "MLP":
        prov = {**self.provenance, **provenance}
        return replace(self, params={k: Tensor(v) for k, v in arrays.items()}, provenance=prov)


def init_mlp(sizes, seed: int, kind: str = "encoder", normalize_output: bool = False, bias: bool = True) -> MLP:
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise DimensionError(f"invalid layer sizes {sizes}")
    rng = make_rng(seed, "init", kind)
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"W{i}"] = Tensor(glorot_uniform(a, b, rng))
        if bias:
            params[f"b{i}"] = Tensor(np.zeros(b))
    return MLP(kind, sizes, params, normalize_output, bias)


def init_encoder(in_dim: int, hidden=(256,), repr_dim: int = 128, seed: int = 0) -> MLP:
    return init_mlp((in_dim, *hidden, repr_dim), seed, kind="encoder")


def init_projector(repr_dim: int, proj_dim: int = 32, seed: int = 0, hidden: bool = True, bias: bool = True) -> MLP:
    if proj_dim < 2:
        raise DimensionError("projection dimension must be at least 2")
    sizes = (repr_dim, repr_dim, proj_dim) if hidden else (repr_dim, proj_dim)
    return init_mlp(sizes, seed, kind="projector", normalize_output=True, bias=bias)


def mlp_forward(model: MLP, x, params: Optional[dict] = None) -> Tensor:
    p = model.params if params is None else params
    h = ad.as_tensor(x)
    if h.ndim != 2 or h.shape[1] != model.in_dim:
        raise DimensionError(f"{model.kind}: expected input width {model.in_dim}, got shape {h.shape}")
    for i in range(model.n_layers):
        h = ad.matmul(h, p[f"W{i}"])
        if model.bias:
            h = ad.add(h, p[f"b{i}"])
        if i < model.n_layers - 1:
            h = ad.relu(h)
    if model.normalize_output:
        h = ad.l2_normalize(h, axis=1)
    return h


def encoder_forward(model: MLP, x, params: Optional[dict] = None) -> Tensor:
    return mlp_forward(model, x, params)


def projector_forward(model: MLP, h, params: Optional[dict] = None) -> Tensor:
    return mlp_forward(model, h, params)


@dataclass(eq=False)
class LinearClassifier:
    """Affine scorer: one logit (``w``: (d,), ``b``: ()) or two (``W``: (2, d), ``b``: (2,))."""

    n_outputs: int
    params: dict
    provenance: dict = field(default_factory=dict)
    kind: str = "classifier"

    @property
    def in_dim(self) -> int:
        w = self.params["w"] if self.n_outputs == 1 else self.params["W"]
        return w.shape[-1] if self.n_outputs == 2 else w.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def with_arrays(self, arrays: dict[str, np.ndarray], **provenance) -> "LinearClassifier":
        prov = {**self.provenance, **provenance}
        return replace(self, params={k: Tensor(v) for k, v in arrays.items()}, provenance=prov)


def init_classifier(in_dim: int, seed: int = 0, n_outputs: int = 1, zero: bool = False) -> LinearClassifier:
    rng = make_rng(seed, "init", "classifier")
    if n_outputs == 1:
        w = np.zeros(in_dim) if zero else glorot_uniform(in_dim, 1, rng, shape=(in_dim,))
        return LinearClassifier(1, {"w": Tensor(w), "b": Tensor(0.0)})
    if n_outputs == 2:
        W = np.zeros((2, in_dim)) if zero else glorot_uniform(in_dim, 2, rng, shape=(2, in_dim))
        return LinearClassifier(2, {"W": Tensor(W), "b": Tensor(np.zeros(2))})
    raise DimensionError("classifier must have 1 or 2 outputs")


def classifier_score(clf: LinearClassifier, h, params: Optional[dict] = None) -> Tensor:
    """Raw logits: shape (n,) for one output, (n, 2) for two."""
    p = clf.params if params is None else params
    h = ad.as_tensor(h)
    if h.ndim != 2 or h.shape[1] != clf.in_dim:
        raise DimensionError(f"classifier: expected input width {clf.in_dim}, got shape {h.shape}")
    if clf.n_outputs == 1:
        return ad.add(ad.matmul(h, p["w"]), p["b"])
    return ad.add(ad.matmul(h, ad.transpose(p["W"])), p["b"])


def collapse_two_logit(clf: LinearClassifier) -> LinearClassifier:
    """Single-logit classifier whose sigmoid equals the softmax positive-class probability."""
    if clf.n_outputs != 2:
        raise KindError("collapse_two_logit needs a two-logit classifier")
    W, b = clf.params["W"].data, clf.params["b"].data
    return LinearClassifier(1, {"w": Tensor(W[0] - W[1]), "b": Tensor(b[0] - b[1])}, dict(clf.provenance))


# ---------------------------------------------------------------------------
# checkpoints

Component = Union[MLP, LinearClassifier]


def parameter_digest(component: Component) -> str:
    """SHA-256 over parameter names, shapes and raw little-endian bytes."""
    h = hashlib.sha256()
    for name in sorted(component.params):
        arr = np.ascontiguousarray(component.params[name].data, dtype="<f8")
        h.update(name.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def _architecture(component: Component) -> dict:
    if isinstance(component, MLP):
        return {
            "sizes": list(component.sizes),
            "activation": "relu",
            "normalize_output": component.normalize_output,
            "bias": component.bias,
        }
    return {"n_outputs": component.n_outputs}


def checkpoint_document(component: Component) -> dict:
    arrays = component.arrays()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": component.kind,
        "architecture": _architecture(component),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "weights": {k: [float(x).hex() for x in v.reshape(-1)] for k, v in arrays.items()},
        "provenance": component.provenance,
        "digest": parameter_digest(component),
    }


def save_checkpoint(component: Component, path) -> str:
    """Write ``component`` as JSON; returns the parameter digest."""
    doc = checkpoint_document(component)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return doc["digest"]


def load_checkpoint(path, expect_kind: Optional[Union[str, tuple]] = None) -> Component:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: corrupt or truncated checkpoint ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {doc.get('version')!r} is not supported")
    kind = doc.get("kind")
    if expect_kind is not None:
        allowed = (expect_kind,) if isinstance(expect_kind, str) else tuple(expect_kind)
        if kind not in allowed:
            raise KindError(f"{path}: expected a {' or '.join(allowed)} checkpoint, found {kind!r}")
    try:
        shapes, weights, arch = doc["shapes"], doc["weights"], doc["architecture"]
        arrays = {}
        for name, shape in shapes.items():
            flat = [float.fromhex(x) for x in weights[name]]
            if len(flat) != int(np.prod(shape, dtype=np.int64)):
                raise IntegrityError(f"{path}: {name} has {len(flat)} values for shape {shape}")
            arrays[name] = np.array(flat, dtype=np.float64).reshape(shape)
        if set(weights) != set(shapes):
            raise IntegrityError(f"{path}: weight and shape entries disagree")
        provenance = doc.get("provenance", {})
        if kind in ("encoder", "projector"):
            sizes = tuple(arch["sizes"])
            comp: Component = MLP(kind, sizes, {k: Tensor(v) for k, v in arrays.items()},
                                  bool(arch["normalize_output"]), bool(arch["bias"]), provenance)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
                if comp.params[f"W{i}"].shape != (a, b):
                    raise IntegrityError(f"{path}: layer {i} shape does not match architecture")
        elif kind == "classifier":
            comp = LinearClassifier(int(arch["n_outputs"]), {k: Tensor(v) for k, v in arrays.items()}, provenance)
        else:
            raise KindError(f"{path}: unknown component kind {kind!r}")
    except (IntegrityError, KindError):
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"{path}: malformed checkpoint ({exc})") from None
    if parameter_digest(comp) != doc.get("digest"):
        raise IntegrityError(f"{path}: parameter digest mismatch")
    return comp
