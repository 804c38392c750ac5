"""Executable checks of the inequalities and gradients the method relies on.

* ``lemma1_numeric_check``: for a two-logit linear classifier, the balanced
  sigmoid risk of the collapsed single logit ``u - v`` never exceeds the
  balanced softmax cross-entropy.
* ``kernel_grid_check``: the pointwise inequality ``1 - p <= -log p``.
* ``equivalence_check``: ``sigmoid((u - v)'x + b_u - b_v)`` equals the softmax
  probability of the first logit.
* ``gradient_check_suite``: reverse-mode gradients of every loss against
  central finite differences, with both sides of each clamp exercised.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .losses import (
    ContrastiveConfig,
    PULossConfig,
    balance_pn_sigmoid_risk,
    batch_contrastive_objective,
    imbnnpu_loss,
    negative_risk,
    nnpu_loss,
    risk_components,
    sigmoid_loss,
    softmax_risk,
    weighted_bce_loss,
)
from .models import LinearClassifier, classifier_score, collapse_two_logit
from .rng import make_rng

BOUND_SLACK = 1e-12
EQUIVALENCE_TOL = 1e-12


@dataclass(frozen=True)
class RiskBoundReport:
    trials: int
    violations: int
    max_slack: float  # largest sigmoid-minus-softmax gap seen; <= 0 when the bound holds

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class EquivalenceReport:
    trials: int
    max_abs_diff: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= EQUIVALENCE_TOL


def _random_labels(rng: np.random.Generator, n: int) -> np.ndarray:
    y = np.where(rng.random(n) < rng.uniform(0.1, 0.9), 1, -1)
    y[0], y[1] = 1, -1
    return rng.permutation(y)


def lemma1_numeric_check(trials: int = 1000, dims=(1, 32), seed: int = 0) -> RiskBoundReport:
    """Draw random ``(W, b, batch, labels, pi')`` and compare the two risks."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    lo, hi = dims
    rng = make_rng(seed, "risk_bound")
    violations, worst = 0, -np.inf
    for _ in range(trials):
        d = int(rng.integers(lo, hi + 1))
        n = int(rng.integers(2, 65))
        scale = 10.0 ** rng.uniform(-2, 1.5)
        clf = LinearClassifier(2, {"W": Tensor(rng.normal(0, scale, (2, d))), "b": Tensor(rng.normal(0, scale, 2))})
        x = rng.normal(0, 1, (n, d))
        y = _random_labels(rng, n)
        pi_prime = float(rng.uniform(0.01, 0.99))
        sig = float(balance_pn_sigmoid_risk(classifier_score(collapse_two_logit(clf), x), y, pi_prime))
        soft = float(softmax_risk(classifier_score(clf, x), y, pi_prime))
        gap = sig - soft
        worst = max(worst, gap)
        violations += gap > BOUND_SLACK
    return RiskBoundReport(trials, int(violations), float(worst))


def kernel_grid_check(points: int = 99) -> int:
    """Violations of ``1 - p <= -log p`` on ``p = 1/(points+1), ..., points/(points+1)``."""
    p = np.arange(1, points + 1) / (points + 1)
    return int(np.sum(1.0 - p > -np.log(p) + BOUND_SLACK))


def _softmax_first(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e[:, 0] / e.sum(axis=1)


def equivalence_check(trials: int = 1000, seed: int = 0) -> EquivalenceReport:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = make_rng(seed, "equivalence")
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 33))
        n = int(rng.integers(1, 33))
        scale = 10.0 ** rng.uniform(-2, 1)
        clf = LinearClassifier(2, {"W": Tensor(rng.normal(0, scale, (2, d))), "b": Tensor(rng.normal(0, scale, 2))})
        x = rng.normal(0, 1, (n, d))
        lhs = ad.sigmoid(classifier_score(collapse_two_logit(clf), x)).data
        rhs = _softmax_first(classifier_score(clf, x).data)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return EquivalenceReport(trials, worst)


# ---------------------------------------------------------------------------
# gradient oracles


@dataclass
class GradientCheckReport:
    name: str
    configs: int
    max_rel_error: float
    branch_counts: dict = field(default_factory=dict)
    kinks_resampled: int = 0
    seconds: float = 0.0
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        both = all(v > 0 for v in self.branch_counts.values())
        return self.max_rel_error < self.tol and both


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|, floor)`` in the max norm."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)


# A case maps a parameter array to (scalar loss, clamp margins). The margins
# are the signed distances of every clamp argument from its threshold; their
# sign pattern identifies the active branches.
Case = Callable[[np.ndarray], tuple]


def _case_sigmoid(rng):
    n = int(rng.integers(1, 9))
    t = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    x0 = rng.normal(0, 3, n)

    def f(x):
        return ad.mean(sigmoid_loss(x, t)), np.zeros(0)

    return x0, f


def _pu_scores(rng):
    n_pos = int(rng.integers(1, 6))
    n_unl = int(rng.integers(1, 9))
    s = rng.permutation(np.r_[np.ones(n_pos), np.zeros(n_unl)])
    mu_pos, mu_unl = rng.uniform(-4, 4, 2)
    x0 = np.where(s == 1, rng.normal(mu_pos, 1, s.size), rng.normal(mu_unl, 1, s.size))
    return x0, s


def _case_pu(loss):
    def build(rng):
        x0, s = _pu_scores(rng)
        pi = float(rng.uniform(0.05, 0.95))
        cfg = PULossConfig(pi, float(rng.uniform(0.05, 0.95)) if loss is imbnnpu_loss else 0.5)

        def f(x):
            rc = risk_components(x, s)
            return loss(rc, cfg), np.atleast_1d(negative_risk(rc, cfg.pi).data)

        return x0, f

    return build


def _case_wbce(rng):
    n = int(rng.integers(1, 9))
    y = (rng.random(n) < 0.5).astype(np.float64)
    x0 = rng.normal(0, 4, n)
    # some logits deep inside the clipped region on either side
    deep = rng.random(n) < 0.3
    x0[deep] = rng.choice([-1.0, 1.0], deep.sum()) * rng.uniform(40, 60, deep.sum())
    w_pos = float(rng.uniform(0.5, 20))
    lo, hi = 1e-12, 1 - 1e-12

    def f(x):
        p = ad.sigmoid(x)
        margins = np.r_[p.data - lo, hi - p.data]
        return weighted_bce_loss(p, y, w_pos), margins

    return x0, f


def _case_contrastive(rng):
    n = int(rng.integers(2, 6))
    m = int(rng.integers(2, 4))
    dim = int(rng.integers(2, 5))
    tau = float(rng.uniform(0.3, 1.0))
    floor_bias = rng.random() < 0.5
    tau_plus = float(rng.uniform(0.5, 0.95) if floor_bias else rng.uniform(0.0, 0.5))
    centers = rng.normal(0, 1, (n, dim))
    spread = 0.05 if floor_bias else 1.0  # near siblings push d_u onto its floor
    x0 = np.repeat(centers, m, axis=0) + rng.normal(0, spread, (n * m, dim))
    cfg = ContrastiveConfig(tau, tau_plus, m)

    def f(x):
        z = ad.l2_normalize(x, axis=1)
        sims = np.exp(z.data @ z.data.T / tau)
        return batch_contrastive_objective(z, cfg), _raw_margin(sims, n, m, cfg)

    return x0, f


def _raw_margin(sims: np.ndarray, n: int, m: int, cfg: ContrastiveConfig) -> np.ndarray:
    sample = np.repeat(np.arange(n), m)
    same = sample[:, None] == sample[None, :]
    sib = same & ~np.eye(n * m, dtype=bool)
    neg_mean = np.where(~same, sims, 0).sum(1) / (m * (n - 1))
    sib_mean = np.where(sib, sims, 0).sum(1) / (m - 1)
    return (neg_mean - cfg.tau_plus * sib_mean) / (1 - cfg.tau_plus) - cfg.floor


CASES = {
    "sigmoid": _case_sigmoid,
    "nnpu": _case_pu(nnpu_loss),
    "imbnnpu": _case_pu(imbnnpu_loss),
    "wbce": _case_wbce,
    "contrastive": _case_contrastive,
}


def _analytic(f, x0: np.ndarray):
    x = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        value, margins = f(x)
    g = ad.backward(tape, value, wrt=[x])[x]
    return g, margins


def check_gradient_case(name: str, configs: int = 100, seed: int = 0, h: float = 1e-4, tol: float = 1e-4,
                        max_resample: int = 10000) -> GradientCheckReport:
    """Compare analytic and finite-difference gradients on ``configs`` random draws.

    Draws whose finite-difference stencil straddles a clamp threshold are
    redrawn. Branch counts record, per clamp kind, how many accepted draws
    had it active somewhere and how many had it inactive somewhere.
    """
    build = CASES[name]
    rng = make_rng(seed, "gradcheck", name)
    start = time.perf_counter()
    worst, kinks, accepted = 0.0, 0, 0
    active = inactive = 0
    while accepted < configs:
        if kinks > max_resample:
            raise RuntimeError(f"{name}: too many draws land on a kink")
        x0, f = build(rng)
        g, margins = _analytic(f, x0)
        pattern = margins > 0
        stable = True

        def scalar(x):
            nonlocal stable
            value, m = f(x)
            if not np.array_equal(m > 0, pattern):
                stable = False
            return float(value)

        num = ad.finite_difference_gradient(scalar, x0, h)
        if not stable:
            kinks += 1
            continue
        accepted += 1
        worst = max(worst, relative_error(g, num))
        if margins.size:
            active += bool(np.any(~pattern))
            inactive += bool(np.any(pattern))
    branches = {} if name == "sigmoid" else {"clamp_active": active, "clamp_inactive": inactive}
    return GradientCheckReport(name, accepted, worst, branches, kinks, time.perf_counter() - start, tol)


def gradient_check_suite(configs: int = 100, seed: int = 0, h: float = 1e-4, tol: float = 1e-4) -> list[GradientCheckReport]:
    return [check_gradient_case(name, configs, seed, h, tol) for name in CASES]


def theory_suite(trials: int = 1000, seed: int = 0) -> dict:
    """Run the risk-bound, kernel and equivalence checks; returns plain values."""
    lemma = lemma1_numeric_check(trials, seed=seed)
    grid = kernel_grid_check()
    eq = equivalence_check(trials, seed=seed)
    return {"risk_bound": lemma, "kernel_grid_violations": grid, "equivalence": eq,
            "passed": lemma.passed and grid == 0 and eq.passed}
