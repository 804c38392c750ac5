import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pucontrast import autodiff as ad
from pucontrast.autodiff import Tape, Tensor, backward, finite_difference_gradient, value_and_grad
from pucontrast.errors import ContractError, DegenerateInputError, DimensionError, NumericError, ProvenanceError
from pucontrast.losses import PULossConfig, imbnnpu_loss, risk_components

finite = st.floats(-5, 5, allow_nan=False)


def grad_of(fn, *values):
    leaves = [Tensor(v, requires_grad=True) for v in values]
    with Tape() as tape:
        root = fn(*leaves)
    g = backward(tape, root, wrt=leaves)
    return [g[t] for t in leaves]


# forward examples

def test_identity_matmul():
    v = np.array([1.5, -2.0, 3.25])
    assert np.array_equal(ad.matmul(np.eye(3), v).data, v)


def test_relu_values():
    assert np.array_equal(ad.relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])


def test_sigmoid_at_zero():
    assert float(ad.sigmoid(0.0)) == 0.5


def test_sigmoid_saturates_without_overflow():
    out = ad.sigmoid(np.array([-800.0, 800.0])).data
    assert out[0] == 0.0 and out[1] == 1.0


def test_shape_mismatch_names_primitive():
    with pytest.raises(DimensionError, match="add"):
        ad.add(np.ones(3), np.ones(4))
    with pytest.raises(DimensionError, match="matmul"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_non_finite_forward_is_rejected():
    with pytest.raises(NumericError):
        ad.log(np.array([0.0, 1.0]))
    with pytest.raises(NumericError):
        ad.exp(np.array([1000.0]))


def test_tensors_are_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_no_recording_without_tape_or_grad():
    x = Tensor([1.0, 2.0])
    with Tape() as tape:
        ad.exp(x)
    assert len(tape) == 0
    y = Tensor([1.0], requires_grad=True)
    ad.exp(y)  # no active tape, nothing to record into
    with Tape() as tape:
        ad.exp(y)
    assert len(tape) == 1


# backward examples

def test_grad_of_sum_of_squares():
    (g,) = grad_of(lambda x: ad.sum_(ad.mul(x, x)), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(g, [2.0, 4.0, 6.0])


def test_grad_of_sigmoid_dot_at_zero():
    x = np.array([0.3, -1.2, 2.0])
    (g,) = grad_of(lambda w: ad.sigmoid(ad.dot(w, x)), np.zeros(3))
    assert np.allclose(g, 0.25 * x, atol=0, rtol=1e-15)


def test_constant_root_has_zero_grad():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    other = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        root = ad.sum_(ad.exp(other))
    g = backward(tape, root, wrt=[p])
    assert np.array_equal(g[p], [0.0, 0.0])
    value, grads = value_and_grad(lambda ps: Tensor(4.0), {"p": p})
    assert value == 4.0 and np.array_equal(grads["p"], [0.0, 0.0])


def test_gradient_has_parameter_shape():
    W = np.arange(6.0).reshape(2, 3) / 10
    x = np.ones((4, 2))
    (g,) = grad_of(lambda w: ad.sum_(ad.sigmoid(ad.matmul(x, w))), W)
    assert g.shape == (2, 3)


def test_non_scalar_root_is_contract_error():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.exp(x)
    with pytest.raises(ContractError):
        backward(tape, y)


def test_detached_root_is_provenance_error():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = ad.sum_(ad.exp(x))
    with Tape() as other:
        pass
    with pytest.raises(ProvenanceError):
        backward(other, y)


def test_clamp_tie_takes_constant_branch():
    (g,) = grad_of(lambda x: ad.sum_(ad.maximum(x, 0.0)), np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_relu_gradient_zero_at_origin():
    (g,) = grad_of(lambda x: ad.sum_(ad.relu(x)), np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_broadcast_gradients_are_reduced():
    a = np.ones((3, 2))
    b = np.array([0.5, -0.5])
    ga, gb = grad_of(lambda x, y: ad.sum_(ad.mul(ad.add(x, y), ad.add(x, y))), a, b)
    assert ga.shape == (3, 2) and gb.shape == (2,)
    assert np.allclose(gb, 3 * 2 * (1 + b))


def test_shared_subexpression_accumulates():
    (g,) = grad_of(lambda x: ad.sum_(ad.add(ad.mul(x, x), ad.mul(x, x))), np.array([1.5]))
    assert g[0] == 6.0


# tape properties

def test_replay_is_bit_identical():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    with Tape() as tape:
        root = ad.mean(ad.sigmoid(ad.matmul(ad.relu(x), W)))
    assert np.array_equal(tape.replay(root), root.data)


def test_tape_is_topologically_ordered():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        root = ad.sum_(ad.log(ad.add(ad.exp(x), 1.0)))
    produced = set()
    for rec in tape.records:
        for t in rec.inputs:
            if id(t) in tape._index:
                assert id(t) in produced
        produced.add(id(rec.output))
    assert tape.contains(root)


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 7))
    W = rng.normal(size=(7, 4))
    a = ad.sum_(ad.sigmoid(ad.matmul(x, W))).data
    b = ad.sum_(ad.sigmoid(ad.matmul(x, W))).data
    assert a.tobytes() == b.tobytes()


def test_pairwise_sum_independent_of_layout():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(37, 5)) * 1e8
    assert np.array_equal(ad.pairwise_sum(a, axis=0), ad.pairwise_sum(np.asfortranarray(a), axis=0))
    assert ad.pairwise_sum(a) == pytest.approx(math.fsum(a.ravel()), rel=1e-12)


# finite differences

def test_fd_quadratic():
    g = finite_difference_gradient(lambda x: float(x[0] ** 2), np.array([3.0]), h=1e-4)
    assert abs(g[0] - 6.0) < 1e-7


def test_fd_constant():
    g = finite_difference_gradient(lambda x: 2.5, np.zeros(4))
    assert np.array_equal(g, np.zeros(4))


def test_fd_reports_offending_coordinate():
    def f(x):
        return math.inf if x[2] > 0 else 0.0

    with pytest.raises(NumericError, match=r"\(2,\)"):
        finite_difference_gradient(f, np.zeros(3))


def test_fd_requires_positive_step():
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, np.zeros(1), h=0.0)


def test_fd_matches_backward_for_one_parameter_pu_model():
    s = np.array([1, 1, 0, 0, 0])
    x = np.array([1.0, 0.5, -0.3, 0.2, -1.0])
    cfg = PULossConfig(0.3, 0.5)

    def loss(w):
        return imbnnpu_loss(risk_components(ad.mul(w, x), s), cfg)

    (g,) = grad_of(loss, np.array(0.7))
    fd = finite_difference_gradient(lambda w: float(loss(Tensor(w))), np.array(0.7))
    assert abs(g - fd) / max(abs(g), 1e-12) < 1e-4


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_composite_gradients_match_finite_differences(W, x):
    def f(Wt):
        h = ad.sigmoid(ad.matmul(Wt, x))
        return ad.add(ad.mean(ad.log(ad.add(h, 0.5))), ad.sum_(ad.mul(ad.relu(ad.matmul(Wt, x)), 0.1)))

    (g,) = grad_of(f, W)
    pre = W @ x
    if np.min(np.abs(pre)) < 1e-3:  # relu kink inside the stencil
        return
    fd = finite_difference_gradient(lambda w: float(f(Tensor(w))), W)
    assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))


# normalization

def test_normalize_345():
    assert np.allclose(ad.l2_normalize([3.0, 4.0]).data, [0.6, 0.8], rtol=0, atol=1e-16)


def test_normalize_zero_slice_is_degenerate():
    with pytest.raises(DegenerateInputError):
        ad.l2_normalize([0.0, 0.0])


def test_normalize_survives_overflowing_squares():
    out = ad.l2_normalize(np.array([[1e300, -1e300], [3.0, 4.0]]), axis=1).data
    assert np.allclose(out, [[2**-0.5, -(2**-0.5)], [0.6, 0.8]], rtol=0, atol=1e-15)


def test_unit_vector_is_fixed_point():
    u = np.array([0.6, 0.8])
    assert np.array_equal(ad.l2_normalize(u).data, ad.l2_normalize(ad.l2_normalize(u)).data)


@given(arrays(np.float64, (4, 3), elements=st.floats(-100, 100, allow_nan=False)))
def test_normalize_is_idempotent(v):
    if np.min(np.linalg.norm(v, axis=1)) < 1e-6:
        return
    once = ad.l2_normalize(v, axis=1).data
    twice = ad.l2_normalize(once, axis=1).data
    assert np.array_equal(once, twice)
    assert np.allclose(np.linalg.norm(once, axis=1), 1.0, atol=1e-14)


def test_normalize_gradient_matches_fd():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(3, 4))
    c = rng.normal(size=(3, 4))
    (g,) = grad_of(lambda t: ad.sum_(ad.mul(ad.l2_normalize(t, axis=1), c)), v)
    fd = finite_difference_gradient(lambda t: float(np.sum(t / np.linalg.norm(t, axis=1, keepdims=True) * c)), v)
    assert np.max(np.abs(g - fd)) < 1e-8
