"""Dense float64 tensors with tape-based reverse-mode differentiation.

Usage::

    w = Tensor(np.zeros(3), requires_grad=True)
    with Tape() as tape:
        loss = sigmoid(dot(w, x))
    grads = backward(tape, loss)     # {w: array([...])}

Operations only record while a tape is active and at least one operand
requires a gradient. Outside a tape the same functions are a plain numpy
forward pass, which is what evaluation code relies on.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, NumericError, ProvenanceError

NORM_EPS = 1e-12
# Unit-norm slices are passed through unchanged so that normalization is idempotent.
_UNIT_SNAP = 1e-14

_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


def current_tape() -> "Tape | None":
    st = _stack()
    return st[-1] if st else None


class Tensor:
    """Immutable float64 array, optionally a differentiation leaf."""

    __slots__ = ("data", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __float__(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"cannot convert tensor of shape {self.shape} to float")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("name", "inputs", "output", "forward", "vjp")

    def __init__(self, name, inputs, output, forward, vjp):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.forward = forward
        self.vjp = vjp


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        st = _stack()
        if st and st[-1] is self:
            st.pop()
        else:
            st.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def _append(self, rec: _Record) -> None:
        self._index[id(rec.output)] = len(self.records)
        self.records.append(rec)

    def contains(self, t: Tensor) -> bool:
        return id(t) in self._index

    def replay(self, root: Tensor) -> np.ndarray:
        """Recompute ``root`` from the leaf values by re-running every record."""
        if id(root) not in self._index:
            raise ProvenanceError("tensor was not produced on this tape")
        values: dict[int, np.ndarray] = {}
        stop = self._index[id(root)]
        for rec in self.records[: stop + 1]:
            args = [values.get(id(t), t.data) for t in rec.inputs]
            values[id(rec.output)] = rec.forward(*args)
        return values[id(root)]


def _apply(name: str, forward: Callable, vjp: Callable, *inputs: Tensor) -> Tensor:
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = forward(*[t.data for t in inputs])
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{name}: non-finite value produced")
    tape = current_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, track)
    if track:
        tape._append(_Record(name, inputs, result, forward, vjp))
    return result


# ---------------------------------------------------------------------------
# reductions


def _tree_reduce(v: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    if n == 0:
        return np.zeros(v.shape[1:])
    while n > 1:
        half = n // 2
        head = v[:half] + v[half : 2 * half]
        if n % 2:
            head = np.concatenate([head, v[2 * half :]], axis=0)
        v = head
        n = v.shape[0]
    return np.array(v[0], dtype=np.float64)


def pairwise_sum(a, axis=None, keepdims: bool = False) -> np.ndarray:
    """Sum by balanced binary tree; the result does not depend on memory layout."""
    a = np.asarray(a, dtype=np.float64)
    if axis is None:
        out = _tree_reduce(a.reshape(-1))
        return out.reshape((1,) * a.ndim) if keepdims else out
    axis = axis % a.ndim
    out = _tree_reduce(np.moveaxis(a, axis, 0))
    return np.expand_dims(out, axis) if keepdims else out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = pairwise_sum(g, axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = pairwise_sum(g, axis=ax, keepdims=True)
    return g


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _apply(
        "add",
        np.add,
        lambda g, out, x, y: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        a,
        b,
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _apply(
        "subtract",
        np.subtract,
        lambda g, out, x, y: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        a,
        b,
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("multiply", a, b)
    sa, sb = a.shape, b.shape
    return _apply(
        "multiply",
        np.multiply,
        lambda g, out, x, y: (_unbroadcast(g * y, sa), _unbroadcast(g * x, sb)),
        a,
        b,
    )


def neg(a) -> Tensor:
    return _apply("negation", np.negative, lambda g, out, x: (-g,), as_tensor(a))


def _matmul_vjp(g, out, x, y):
    if x.ndim == 1 and y.ndim == 1:
        return g * y, g * x
    if x.ndim == 1:
        return y @ g, np.outer(x, g)
    if y.ndim == 1:
        return np.outer(g, y), x.T @ g
    return g @ y.T, x.T @ g


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul: expected 1-D or 2-D operands, got {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")
    return _apply("matmul", np.matmul, _matmul_vjp, a, b)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot: expected equal-length vectors, got {a.shape} and {b.shape}")
    return _apply("dot", np.dot, lambda g, out, x, y: (g * y, g * x), a, b)


def exp(a) -> Tensor:
    return _apply("exp", np.exp, lambda g, out, x: (g * out,), as_tensor(a))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive input")
    return _apply("log", np.log, lambda g, out, x: (g / x,), a)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a) -> Tensor:
    return _apply("sigmoid", _sigmoid, lambda g, out, x: (g * out * (1.0 - out),), as_tensor(a))


def relu(a) -> Tensor:
    return _apply(
        "relu",
        lambda x: np.maximum(x, 0.0),
        lambda g, out, x: (g * (x > 0.0),),
        as_tensor(a),
    )


def maximum(a, c: float) -> Tensor:
    """``max(a, c)`` for a constant ``c``; ties take the constant (zero gradient)."""
    c = float(c)
    return _apply(
        "max_const",
        lambda x: np.where(x > c, x, c),
        lambda g, out, x: (g * (x > c),),
        as_tensor(a),
    )


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g, out, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _apply("sum", lambda x: pairwise_sum(x, axis, keepdims), vjp, a)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.size if axis is None else shape[axis]

    def vjp(g, out, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _apply("mean", lambda x: pairwise_sum(x, axis, keepdims) / n, vjp, a)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {a.shape}")
    return _apply("transpose", lambda x: x.T.copy(), lambda g, out, x: (g.T,), a)


def _slice_norm(x: np.ndarray, axis: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        norm = np.sqrt(pairwise_sum(x * x, axis=axis, keepdims=True))
    if not np.all(np.isfinite(norm)):
        # squares overflowed; rescale by the largest magnitude first
        scale = np.max(np.abs(x), axis=axis, keepdims=True)
        safe = np.where(scale > 0, scale, 1.0)
        norm = safe * np.sqrt(pairwise_sum((x / safe) ** 2, axis=axis, keepdims=True))
    return norm


def _normalize(x: np.ndarray, axis: int) -> np.ndarray:
    norm = _slice_norm(x, axis)
    if np.any(norm < NORM_EPS):
        bad = np.argwhere(norm.reshape(-1) < NORM_EPS).reshape(-1)
        raise DegenerateInputError(f"l2_normalize: near-zero slice(s) at {bad[:5].tolist()}")
    norm = np.where(np.abs(norm - 1.0) <= _UNIT_SNAP, 1.0, norm)
    return x / norm


def l2_normalize(v, axis: int = -1) -> Tensor:
    """Scale every slice along ``axis`` to unit Euclidean norm."""
    v = as_tensor(v)
    ax = axis % max(v.ndim, 1)

    def vjp(g, out, x):
        norm = _slice_norm(x, ax)
        norm = np.where(np.abs(norm - 1.0) <= _UNIT_SNAP, 1.0, norm)
        proj = pairwise_sum(g * out, axis=ax, keepdims=True)
        return ((g - out * proj) / norm,)

    return _apply("l2_normalize", lambda x: _normalize(x, ax), vjp, v)


# ---------------------------------------------------------------------------
# differentiation


def backward(tape: Tape, root: Tensor, wrt: Iterable[Tensor] = ()) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``root`` with respect to every leaf on ``tape``.

    Leaves are tensors with ``requires_grad`` that were consumed by a recorded
    operation but not produced by one. Tensors listed in ``wrt`` are always
    present in the result (zeros when ``root`` does not depend on them).
    """
    if root.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    stop = tape._index.get(id(root))
    if stop is None:
        raise ProvenanceError("backward: root was not produced by this tape")
    records = tape.records[: stop + 1]
    leaves: dict[int, Tensor] = {}
    for rec in records:
        for t in rec.inputs:
            if t.requires_grad and id(t) not in tape._index:
                leaves[id(t)] = t
    for t in wrt:
        leaves.setdefault(id(t), t)

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for rec in reversed(records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.vjp(g, rec.output.data, *[t.data for t in rec.inputs])
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    return {t: np.asarray(grads.get(k, np.zeros_like(t.data)), dtype=np.float64).reshape(t.shape) for k, t in leaves.items()}


def value_and_grad(fn: Callable[[dict], Tensor], params: dict[str, Tensor]) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``fn(params)`` on a fresh tape and return its value and per-name gradients."""
    with Tape() as tape:
        root = fn(params)
    if not tape.contains(root):
        return float(root), {k: np.zeros_like(p.data) for k, p in params.items()}
    g = backward(tape, root, wrt=params.values())
    return float(root), {k: g[p] for k, p in params.items()}


def finite_difference_gradient(f: Callable, x, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not h > 0:
        raise ValueError("step size h must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        vals = []
        for step in (h, -h):
            xp = x0.copy()
            xp[idx] += step
            fx = float(f(xp))
            if not np.isfinite(fx):
                raise NumericError(f"finite difference: non-finite evaluation at coordinate {idx}")
            vals.append(fx)
        grad[idx] = (vals[0] - vals[1]) / (2.0 * h)
    return grad
