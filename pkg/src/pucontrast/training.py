"""Optimizer and training loops.

Step 1 (``pretrain``) fits encoder and projector on the contrastive
objective using features only. Step 2 (``train_classifier``) freezes the
encoder, computes representations once, and fits a linear classifier with a
PU loss. ``train_end_to_end`` and ``train_supervised_baseline`` are the
comparison baselines; ``prior_sweep`` repeats step 2 under a misspecified
class prior.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import losses
from .augment import AugmentationPolicy, augment_batch
from .autodiff import Tensor
from .data import PUDataset, epoch_batches, sample_minibatch
from .errors import CompositionError, ConfigError, DimensionError, LabelError, NumericError, TrainingError
from .losses import ContrastiveConfig, PULossConfig
from .metrics import MetricsRecord, evaluate_scores
from .models import (
    MLP,
    LinearClassifier,
    classifier_score,
    encoder_forward,
    init_classifier,
    init_encoder,
    init_projector,
    projector_forward,
)
from .rng import make_rng

log = logging.getLogger(__name__)

LOSS_KINDS = ("imbnnpu", "nnpu", "wbce", "bce")


def config_digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: dict, grads: dict) -> tuple[dict, AdamState]:
    """One bias-corrected Adam step over name-keyed arrays."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise DimensionError(f"gradient for {name!r} has shape {np.shape(g)}, parameter {np.shape(params[name])}")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            continue
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_new[name], v_new[name] = m, v
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new_params, replace(state, step=t, m={**state.m, **m_new}, v={**state.v, **v_new})


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 50
    batch_size: int = 128
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy.default)
    seed: int = 0
    lr: float = 3e-4
    hidden: tuple = (256,)
    repr_dim: int = 128
    proj_dim: int = 32

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("pretraining needs at least one epoch")
        if self.batch_size < 2:
            raise ConfigError("pretraining batch size must be at least 2")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = self.augmentation.to_list()
        d["hidden"] = list(self.hidden)
        return d


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 100
    batch_size: int = 128
    pi: Optional[float] = None
    pi_prime: float = 0.5
    loss: str = "imbnnpu"
    seed: int = 0
    lr: float = 3e-4
    # encoder shape for the end-to-end baselines
    hidden: tuple = (256,)
    repr_dim: int = 128

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("classifier training needs at least one epoch")
        if self.batch_size < 2:
            raise ConfigError("classifier batch size must be at least 2")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {', '.join(LOSS_KINDS)}")
        if self.pi is not None:
            PULossConfig(self.pi, self.pi_prime)
        elif not 0 < self.pi_prime < 1:
            raise ConfigError("pi_prime must lie in (0, 1)")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def pu_config(self, data: Optional[PUDataset] = None) -> PULossConfig:
        pi = self.pi
        if pi is None:
            if data is None or data.pi_true is None:
                raise ConfigError("class prior pi not given and not derivable from the data")
            pi = data.pi_true
        return PULossConfig(pi, self.pi_prime)


@dataclass(frozen=True)
class PriorSweepConfig:
    factors: tuple
    base_pi: float
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(float(b) for b in self.factors))
        if not self.factors:
            raise ConfigError("sweep needs at least one distortion factor")
        for b in self.factors:
            if not b > 0:
                raise ConfigError(f"distortion factor must be positive, got {b}")
            if not b * self.base_pi < 1:
                raise ConfigError(f"distorted prior {b} * {self.base_pi} is not below 1")


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    loss: float
    metrics: Optional[MetricsRecord] = None


# ---------------------------------------------------------------------------
# generic loop


def _optimize(
    params: dict,
    batch_loss: Callable[[dict, object], Tensor],
    batches_for_epoch: Callable[[int], list],
    epochs: int,
    lr: float,
    on_epoch: Optional[Callable[[int, dict], Optional[MetricsRecord]]] = None,
    what: str = "training",
) -> tuple[dict, list[TraceRow]]:
    state = AdamState(lr=lr)
    trace = []
    for epoch in range(1, epochs + 1):
        batch_losses = []
        for batch in batches_for_epoch(epoch):
            leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            try:
                with ad.Tape() as tape:
                    root = batch_loss(leaves, batch)
            except NumericError as exc:
                raise TrainingError(f"{what}: numeric divergence in epoch {epoch}: {exc}") from exc
            value = float(root)
            if not np.isfinite(value):
                raise TrainingError(f"{what}: non-finite loss in epoch {epoch}")
            if tape.contains(root):
                g = ad.backward(tape, root, wrt=leaves.values())
                grads = {k: g[t] for k, t in leaves.items()}
            else:
                grads = {k: np.zeros_like(v) for k, v in params.items()}
            params, state = adam_update(state, params, grads)
            batch_losses.append(value)
        if not batch_losses:
            raise TrainingError(f"{what}: epoch {epoch} produced no batches")
        mean_loss = float(ad.pairwise_sum(np.array(batch_losses)) / len(batch_losses))
        metrics = on_epoch(epoch, params) if on_epoch else None
        trace.append(TraceRow(epoch, mean_loss, metrics))
        log.debug("%s epoch %d loss %.6f", what, epoch, mean_loss)
    return params, trace


def _split(params: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


# ---------------------------------------------------------------------------
# step 1


@dataclass
class PretrainResult:
    encoder: MLP
    projector: MLP
    trace: list


def pretrain(data, cfg: PretrainConfig, encoder: Optional[MLP] = None, projector: Optional[MLP] = None) -> PretrainResult:
    """Fit encoder and projector on the debiased contrastive objective (labels unused)."""
    x = data.features if isinstance(data, PUDataset) else np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    if n < cfg.batch_size:
        raise ConfigError(f"{n} samples is fewer than the batch size {cfg.batch_size}")
    if encoder is None:
        encoder = init_encoder(x.shape[1], cfg.hidden, cfg.repr_dim, seed=cfg.seed)
    if projector is None:
        projector = init_projector(encoder.out_dim, cfg.proj_dim, seed=cfg.seed)
    if encoder.in_dim != x.shape[1]:
        raise DimensionError(f"encoder expects width {encoder.in_dim}, data has {x.shape[1]}")
    m = cfg.contrastive.views

    def batches(epoch):
        rng = make_rng(cfg.seed, "pretrain", epoch)
        return [augment_batch(x[idx], cfg.augmentation, m, rng)
                for idx in epoch_batches(n, cfg.batch_size, rng, min_size=2)]

    def batch_loss(p, views):
        h = encoder_forward(encoder, views, _split(p, "enc."))
        z = projector_forward(projector, h, _split(p, "proj."))
        return losses.batch_contrastive_objective(z, cfg.contrastive)

    params = {f"enc.{k}": v for k, v in encoder.arrays().items()}
    params.update({f"proj.{k}": v for k, v in projector.arrays().items()})
    params, trace = _optimize(params, batch_loss, batches, cfg.epochs, cfg.lr, what="pretrain")
    prov = {
        "step": "pretrain",
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "loss": "debiased_contrastive" if cfg.contrastive.tau_plus > 0 else "biased_contrastive",
        "config_digest": config_digest(cfg.to_dict()),
    }
    return PretrainResult(
        encoder.with_arrays(_split(params, "enc."), **prov),
        projector.with_arrays(_split(params, "proj."), **prov),
        trace,
    )


# ---------------------------------------------------------------------------
# step 2 and baselines


def _check_labels(data: PUDataset, cfg: ClassifierConfig) -> None:
    if cfg.loss in ("bce", "wbce") and data.y_true is None:
        raise LabelError(f"loss {cfg.loss!r} is a benchmarking baseline and needs data with true labels")
    if data.n_labeled == 0 or data.n_unlabeled == 0:
        raise CompositionError("training data needs both labeled positives and unlabeled samples")


def _pu_batches(data: PUDataset, cfg: ClassifierConfig, stream: str):
    need_both = cfg.loss in ("imbnnpu", "nnpu")

    def batches(epoch):
        rng = make_rng(cfg.seed, stream, epoch)
        out = []
        for idx in epoch_batches(data.n, cfg.batch_size, rng, min_size=2):
            k = int(data.s[idx].sum())
            if need_both and not 0 < k < len(idx):
                idx = sample_minibatch(data, len(idx), rng, require_both_kinds=True)
            out.append(idx)
        return out

    return batches


def _loss_from_scores(cfg: ClassifierConfig, data: PUDataset, targets: np.ndarray, w_pos: float):
    if cfg.loss in ("imbnnpu", "nnpu"):
        pu = cfg.pu_config(data)
        fn = losses.imbnnpu_loss if cfg.loss == "imbnnpu" else losses.nnpu_loss
        return lambda scores, idx: fn(losses.risk_components(scores, targets[idx]), pu)
    weight = w_pos if cfg.loss == "wbce" else 1.0
    return lambda scores, idx: losses.weighted_bce_loss(ad.sigmoid(scores), targets[idx], weight)


def _pseudo_label_weight(data: PUDataset) -> float:
    return data.n_unlabeled / data.n_labeled


@dataclass
class ClassifierResult:
    classifier: LinearClassifier
    trace: list
    encoder: Optional[MLP] = None


def train_classifier(
    encoder: MLP,
    data: PUDataset,
    cfg: ClassifierConfig,
    classifier: Optional[LinearClassifier] = None,
    eval_data: Optional[PUDataset] = None,
) -> ClassifierResult:
    """Fit a linear classifier on frozen representations.

    The encoder is evaluated once, without augmentation; its parameters are
    never touched. ``bce``/``wbce`` treat unlabeled samples as negatives
    (``s`` is the target), with ``w_pos`` = unlabeled / labeled for ``wbce``.
    """
    if encoder.in_dim != data.d:
        raise DimensionError(f"encoder expects width {encoder.in_dim}, data has {data.d}")
    _check_labels(data, cfg)
    h = encoder_forward(encoder, data.features).data
    h_eval = encoder_forward(encoder, eval_data.features).data if eval_data is not None else None
    if classifier is None:
        classifier = init_classifier(h.shape[1], seed=cfg.seed)
    loss_fn = _loss_from_scores(cfg, data, data.s, _pseudo_label_weight(data))

    def batch_loss(p, idx):
        return loss_fn(classifier_score(classifier, h[idx], p), idx)

    def on_epoch(epoch, p):
        if h_eval is None:
            return None
        clf = classifier.with_arrays(p)
        return evaluate_scores(classifier_score(clf, h_eval).data, eval_data.y_true)

    params, trace = _optimize(
        classifier.arrays(), batch_loss, _pu_batches(data, cfg, "classifier"), cfg.epochs, cfg.lr,
        on_epoch if eval_data is not None else None, what="classifier",
    )
    pi = cfg.pu_config(data).pi if cfg.loss in ("imbnnpu", "nnpu") else None
    prov = {
        "step": "classifier",
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "loss": cfg.loss,
        "pi": pi,
        "encoder": encoder.provenance.get("config_digest"),
        "config_digest": config_digest(cfg.to_dict()),
    }
    return ClassifierResult(classifier.with_arrays(params, **prov), trace)


def _fit_jointly(data, cfg, targets, w_pos, encoder, eval_data, label_source):
    if encoder is None:
        encoder = init_encoder(data.d, cfg.hidden, cfg.repr_dim, seed=cfg.seed)
    if encoder.in_dim != data.d:
        raise DimensionError(f"encoder expects width {encoder.in_dim}, data has {data.d}")
    classifier = init_classifier(encoder.out_dim, seed=cfg.seed)
    x = data.features
    loss_fn = _loss_from_scores(cfg, data, targets, w_pos)

    def batch_loss(p, idx):
        h = encoder_forward(encoder, x[idx], _split(p, "enc."))
        return loss_fn(classifier_score(classifier, h, _split(p, "clf.")), idx)

    def on_epoch(epoch, p):
        enc = encoder.with_arrays(_split(p, "enc."))
        clf = classifier.with_arrays(_split(p, "clf."))
        h_eval = encoder_forward(enc, eval_data.features).data
        return evaluate_scores(classifier_score(clf, h_eval).data, eval_data.y_true)

    params = {f"enc.{k}": v for k, v in encoder.arrays().items()}
    params.update({f"clf.{k}": v for k, v in classifier.arrays().items()})
    params, trace = _optimize(
        params, batch_loss, _pu_batches(data, cfg, "end_to_end"), cfg.epochs, cfg.lr,
        on_epoch if eval_data is not None else None, what="end-to-end",
    )
    prov = {
        "step": "end_to_end",
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "loss": cfg.loss,
        "labels": label_source,
        "w_pos": w_pos if cfg.loss == "wbce" else 1.0,
        "config_digest": config_digest(cfg.to_dict()),
    }
    return ClassifierResult(
        classifier.with_arrays(_split(params, "clf."), **prov),
        trace,
        encoder.with_arrays(_split(params, "enc."), **prov),
    )


def train_end_to_end(data: PUDataset, cfg: ClassifierConfig, eval_data: Optional[PUDataset] = None,
                     encoder: Optional[MLP] = None) -> ClassifierResult:
    """Encoder and classifier trained together on the PU loss, from scratch by default."""
    _check_labels(data, cfg)
    return _fit_jointly(data, cfg, data.s, _pseudo_label_weight(data), encoder, eval_data, "pu")


def train_supervised_baseline(encoder: Optional[MLP], data: PUDataset, cfg: ClassifierConfig,
                              eval_data: Optional[PUDataset] = None) -> ClassifierResult:
    """(Weighted) BCE on the true labels, ``w_pos`` = negatives / positives.

    With ``encoder=None`` encoder and classifier are trained end to end;
    otherwise the given encoder is frozen and only a linear probe is fitted.
    """
    if data.y_true is None:
        raise LabelError("supervised baseline needs true labels")
    loss = cfg.loss if cfg.loss in ("bce", "wbce") else "wbce"
    cfg = replace(cfg, loss=loss)
    y01 = (data.y_true == 1).astype(np.int64)
    n_pos = int(y01.sum())
    if n_pos == 0 or n_pos == data.n:
        raise CompositionError("supervised baseline needs both classes")
    w_pos = (data.n - n_pos) / n_pos
    if encoder is None:
        return _fit_jointly(data, cfg, y01, w_pos, None, eval_data, "true")
    h = encoder_forward(encoder, data.features).data
    h_eval = encoder_forward(encoder, eval_data.features).data if eval_data is not None else None
    classifier = init_classifier(h.shape[1], seed=cfg.seed)
    loss_fn = _loss_from_scores(cfg, data, y01, w_pos)

    def on_epoch(epoch, p):
        return evaluate_scores(classifier_score(classifier.with_arrays(p), h_eval).data, eval_data.y_true)

    params, trace = _optimize(
        classifier.arrays(),
        lambda p, idx: loss_fn(classifier_score(classifier, h[idx], p), idx),
        _pu_batches(data, cfg, "supervised"), cfg.epochs, cfg.lr,
        on_epoch if eval_data is not None else None, what="supervised",
    )
    prov = {"step": "supervised_probe", "seed": cfg.seed, "epochs": cfg.epochs, "loss": loss,
            "labels": "true", "w_pos": w_pos if loss == "wbce" else 1.0, "config_digest": config_digest(cfg.to_dict())}
    return ClassifierResult(classifier.with_arrays(params, **prov), trace)


# ---------------------------------------------------------------------------
# prior misspecification


@dataclass(frozen=True)
class SweepRow:
    b_dis: float
    epoch: int
    loss: float
    metrics: MetricsRecord


def prior_sweep(encoder: MLP, data: PUDataset, test: PUDataset, sweep: PriorSweepConfig) -> list[SweepRow]:
    """One classifier per distortion factor with the prior replaced by ``b_dis * pi``.

    All factors share the classifier seed, so they see identical minibatches
    and initializations and differ only through the prior.
    """
    if test.y_true is None:
        raise LabelError("sweep evaluation needs a labeled test set")
    rows = []
    for b in sweep.factors:
        cfg = replace(sweep.classifier, pi=b * sweep.base_pi)
        result = train_classifier(encoder, data, cfg, eval_data=test)
        rows.extend(SweepRow(b, r.epoch, r.loss, r.metrics) for r in result.trace)
    return rows
