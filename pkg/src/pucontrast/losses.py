"""PU risk estimators and contrastive objectives.

All functions take and return :class:`~pucontrast.autodiff.Tensor` values
(plain arrays are accepted and wrapped), so they are differentiable when
called under a tape. Sign convention for the sigmoid loss: the loss of score
``z`` toward target ``t`` is ``sigmoid(-t * z)``, small when score and
target agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import CompositionError, ConfigError, ContractError

PROB_EPS = 1e-12
UNIT_TOL = 1e-6


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5
    tau_plus: float = 0.1
    views: int = 2

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0 <= self.tau_plus < 1:
            raise ConfigError(f"tau_plus must lie in [0, 1), got {self.tau_plus}")
        if self.views < 2:
            raise ConfigError(f"need at least 2 views per sample, got {self.views}")

    @property
    def floor(self) -> float:
        return math.exp(-1.0 / self.tau)


@dataclass(frozen=True)
class PULossConfig:
    pi: float
    pi_prime: float = 0.5

    def __post_init__(self):
        if not 0 < self.pi < 1:
            raise ConfigError(f"class prior pi must lie in (0, 1), got {self.pi}")
        if not 0 < self.pi_prime < 1:
            raise ConfigError(f"pi_prime must lie in (0, 1), got {self.pi_prime}")


@dataclass(frozen=True)
class RiskComponents:
    """Partial empirical risks of one minibatch.

    ``l_pos_as_pos``: labeled positives scored toward +1.
    ``l_unl_as_neg``: unlabeled samples scored toward -1.
    ``l_pos_as_neg``: labeled positives scored toward -1.
    """

    l_pos_as_pos: Tensor
    l_unl_as_neg: Tensor
    l_pos_as_neg: Tensor
    n_pos: int
    n_unl: int

    def __post_init__(self):
        for name in ("l_pos_as_pos", "l_unl_as_neg", "l_pos_as_neg"):
            value = as_tensor(getattr(self, name))
            object.__setattr__(self, name, value)
            if not 0.0 <= float(value) <= 1.0:
                raise ContractError(f"{name}={float(value)} outside [0, 1]")
        if abs(float(self.l_pos_as_pos) + float(self.l_pos_as_neg) - 1.0) > 1e-12:
            raise ContractError("l_pos_as_pos + l_pos_as_neg must equal 1")
        if self.n_pos < 1 or self.n_unl < 1:
            raise CompositionError("risk components need at least one positive and one unlabeled sample")


def sigmoid_loss(score, target) -> Tensor:
    """``1 / (1 + exp(target * score))`` for targets in {+1, -1}."""
    t = np.asarray(target, dtype=np.float64)
    if not np.all(np.isin(t, (-1.0, 1.0))):
        raise ContractError("sigmoid_loss target must be +1 or -1")
    return ad.sigmoid(ad.neg(ad.mul(t, score)))


def _masked_mean(values: Tensor, mask: np.ndarray, count: int) -> Tensor:
    return ad.sum_(ad.mul(values, mask)) / count


def risk_components(scores, s) -> RiskComponents:
    scores = as_tensor(scores)
    s = np.asarray(s).reshape(-1)
    if scores.shape != s.shape:
        raise ContractError(f"scores {scores.shape} and labels {s.shape} differ in shape")
    pos = (s == 1).astype(np.float64)
    unl = (s == 0).astype(np.float64)
    n_pos, n_unl = int(pos.sum()), int(unl.sum())
    if n_pos == 0 or n_unl == 0:
        raise CompositionError(f"batch has {n_pos} labeled positives and {n_unl} unlabeled; need both")
    toward_pos = sigmoid_loss(scores, 1.0)
    toward_neg = sigmoid_loss(scores, -1.0)
    return RiskComponents(
        l_pos_as_pos=_masked_mean(toward_pos, pos, n_pos),
        l_unl_as_neg=_masked_mean(toward_neg, unl, n_unl),
        l_pos_as_neg=_masked_mean(toward_neg, pos, n_pos),
        n_pos=n_pos,
        n_unl=n_unl,
    )


def negative_risk(rc: RiskComponents, pi: float) -> Tensor:
    """Estimated negative-class risk before clamping; may be negative."""
    return ad.sub(rc.l_unl_as_neg, ad.mul(pi, rc.l_pos_as_neg))


def nnpu_loss(rc: RiskComponents, cfg: PULossConfig) -> Tensor:
    return ad.add(ad.mul(cfg.pi, rc.l_pos_as_pos), ad.maximum(negative_risk(rc, cfg.pi), 0.0))


def imbnnpu_loss(rc: RiskComponents, cfg: PULossConfig) -> Tensor:
    """Non-negative PU risk with positives reweighted to a share ``pi_prime``."""
    weight = (1.0 - cfg.pi_prime) / (1.0 - cfg.pi)
    clamped = ad.maximum(negative_risk(rc, cfg.pi), 0.0)
    return ad.add(ad.mul(cfg.pi_prime, rc.l_pos_as_pos), ad.mul(weight, clamped))


def _clip_prob(p: Tensor) -> Tensor:
    lower = ad.maximum(p, PROB_EPS)
    return ad.neg(ad.maximum(ad.neg(lower), -(1.0 - PROB_EPS)))


def weighted_bce_loss(prob, y, w_pos: float = 1.0) -> Tensor:
    """Batch mean of ``-(w_pos*y*log p + (1-y)*log(1-p))`` with ``p`` clipped to [eps, 1-eps]."""
    if not w_pos > 0:
        raise ConfigError("w_pos must be positive")
    y = np.asarray(y, dtype=np.float64)
    p = _clip_prob(as_tensor(prob))
    if p.shape != y.shape:
        raise ContractError(f"prob {p.shape} and labels {y.shape} differ in shape")
    pos_term = ad.mul(w_pos * y, ad.log(p))
    neg_term = ad.mul(1.0 - y, ad.log(ad.sub(1.0, p)))
    return ad.neg(ad.mean(ad.add(pos_term, neg_term)))


def bce_loss(prob, y) -> Tensor:
    return weighted_bce_loss(prob, y, 1.0)


# ---------------------------------------------------------------------------
# contrastive


def _check_unit(z: Tensor, what: str) -> None:
    norms = np.sqrt(np.sum(z.data * z.data, axis=-1))
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ContractError(f"{what} must be unit-normalized (max norm deviation {np.max(np.abs(norms - 1.0)):.3g})")


def pair_similarity(z_a, z_b, tau: float) -> Tensor:
    """Exponentiated tempered cosine similarity of two unit vectors."""
    z_a, z_b = as_tensor(z_a), as_tensor(z_b)
    _check_unit(z_a, "z_a")
    _check_unit(z_b, "z_b")
    if not tau > 0:
        raise ConfigError("tau must be positive")
    return ad.exp(ad.dot(z_a, z_b) / tau)


def _view_layout(views: Tensor, m: int) -> int:
    if views.ndim != 2:
        raise ContractError(f"views must be a (N*M, dim) matrix, got shape {views.shape}")
    if views.shape[0] % m:
        raise ContractError(f"{views.shape[0]} rows is not a multiple of M={m}")
    n = views.shape[0] // m
    if n < 2:
        raise CompositionError("no negatives available: need at least 2 samples per batch")
    return n


def _masks(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    sample = np.repeat(np.arange(n), m)
    same = sample[:, None] == sample[None, :]
    sibling = same & ~np.eye(n * m, dtype=bool)
    return (~same).astype(np.float64), sibling.astype(np.float64)


def debiased_negative_estimate(anchor: tuple[int, int], views, cfg: ContrastiveConfig) -> Tensor:
    """Clamped, false-negative-corrected mean similarity of one anchor view to its negatives.

    ``views`` holds the projections sample-major: row ``i*M + k`` is view ``k``
    of sample ``i``.
    """
    views = as_tensor(views)
    m = cfg.views
    n = _view_layout(views, m)
    _check_unit(views, "views")
    i, k = anchor
    a = i * m + k
    neg, sib = _masks(n, m)
    onehot = np.zeros(n * m)
    onehot[a] = 1.0
    anchor_z = ad.matmul(onehot, views)
    sims = ad.exp(ad.matmul(views, anchor_z) / cfg.tau)
    neg_mean = ad.sum_(ad.mul(sims, neg[a])) / (m * (n - 1))
    sib_mean = ad.sum_(ad.mul(sims, sib[a])) / (m - 1)
    raw = ad.sub(neg_mean, ad.mul(cfg.tau_plus, sib_mean)) / (1.0 - cfg.tau_plus)
    return ad.maximum(raw, cfg.floor)


def debiased_pair_loss(pos_sim, d_u, n_neg: int, cfg: ContrastiveConfig) -> Tensor:
    """``-log(pos / (pos + n_neg * d_u))``."""
    pos_sim, d_u = as_tensor(pos_sim), as_tensor(d_u)
    if np.any(pos_sim.data <= 0):
        raise ContractError("pos_sim must be positive")
    if np.any(d_u.data < cfg.floor * (1 - 1e-12)):
        raise ContractError("d_u below its floor exp(-1/tau)")
    return ad.sub(ad.log(ad.add(pos_sim, ad.mul(float(n_neg), d_u))), ad.log(pos_sim))


def _similarity_matrix(views: Tensor, tau: float) -> Tensor:
    return ad.exp(ad.matmul(views, ad.transpose(views)) / tau)


def _negative_estimates(views: Tensor, cfg: ContrastiveConfig) -> tuple[Tensor, Tensor]:
    m = cfg.views
    n = _view_layout(views, m)
    neg, sib = _masks(n, m)
    sims = _similarity_matrix(views, cfg.tau)
    neg_mean = ad.sum_(ad.mul(sims, neg), axis=1, keepdims=True) / (m * (n - 1))
    sib_mean = ad.sum_(ad.mul(sims, sib), axis=1, keepdims=True) / (m - 1)
    raw = ad.sub(neg_mean, ad.mul(cfg.tau_plus, sib_mean)) / (1.0 - cfg.tau_plus)
    return sims, ad.maximum(raw, cfg.floor)


def negative_estimates(views, cfg: ContrastiveConfig) -> Tensor:
    """``d_u`` for every view at once, as an (N*M, 1) column."""
    views = as_tensor(views)
    _check_unit(views, "views")
    return _negative_estimates(views, cfg)[1]


def batch_contrastive_objective(views, cfg: ContrastiveConfig) -> Tensor:
    """Mean debiased pair loss over all ordered same-sample view pairs of the batch."""
    views = as_tensor(views)
    m = cfg.views
    n = _view_layout(views, m)
    _check_unit(views, "views")
    _, sib = _masks(n, m)
    sims, d_u = _negative_estimates(views, cfg)
    n_neg = m * (n - 1)
    pair = ad.sub(ad.log(ad.add(sims, ad.mul(float(n_neg), d_u))), ad.log(sims))
    return ad.sum_(ad.mul(pair, sib)) / (n * m * (m - 1))


def biased_contrastive_objective(views, tau: float, m: int = 2) -> Tensor:
    """Uncorrected estimator: every other-sample view is a negative, no clamp."""
    views = as_tensor(views)
    n = _view_layout(views, m)
    _check_unit(views, "views")
    neg, sib = _masks(n, m)
    sims = _similarity_matrix(views, tau)
    neg_total = ad.sum_(ad.mul(sims, neg), axis=1, keepdims=True)
    pair = ad.sub(ad.log(ad.add(sims, neg_total)), ad.log(sims))
    return ad.sum_(ad.mul(pair, sib)) / (n * m * (m - 1))


# ---------------------------------------------------------------------------
# fully labeled risks used by the theory checks


def _class_masks(y) -> tuple[np.ndarray, np.ndarray, int, int]:
    y = np.asarray(y).reshape(-1)
    pos = (y == 1).astype(np.float64)
    neg = (y == -1).astype(np.float64)
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise CompositionError("both classes must be present")
    return pos, neg, n_pos, n_neg


def balance_pn_sigmoid_risk(scores, y, pi_prime: float = 0.5) -> Tensor:
    """Class-balanced sigmoid risk on true labels in {+1, -1}."""
    pos, neg, n_pos, n_neg = _class_masks(y)
    scores = as_tensor(scores)
    r_pos = _masked_mean(sigmoid_loss(scores, 1.0), pos, n_pos)
    r_neg = _masked_mean(sigmoid_loss(scores, -1.0), neg, n_neg)
    return ad.add(ad.mul(pi_prime, r_pos), ad.mul(1.0 - pi_prime, r_neg))


def softmax_risk(logits, y, pi_prime: float = 0.5) -> Tensor:
    """Class-balanced cross-entropy of a two-logit classifier.

    Column 0 is the positive-class logit, column 1 the negative-class logit.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ContractError(f"expected (n, 2) logits, got {logits.shape}")
    pos, neg, n_pos, n_neg = _class_masks(y)
    shift = np.max(logits.data, axis=1, keepdims=True)
    shifted = ad.sub(logits, shift)
    lse = ad.log(ad.sum_(ad.exp(shifted), axis=1))
    true_logit = ad.sum_(ad.mul(shifted, np.stack([pos, neg], axis=1)), axis=1)
    nll = ad.sub(lse, true_logit)
    nll = ad.neg(ad.maximum(ad.neg(nll), math.log(PROB_EPS)))
    r_pos = _masked_mean(nll, pos, n_pos)
    r_neg = _masked_mean(nll, neg, n_neg)
    return ad.add(ad.mul(pi_prime, r_pos), ad.mul(1.0 - pi_prime, r_neg))
