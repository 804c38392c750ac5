from dataclasses import replace

import numpy as np
import pytest

import oracles
from pucontrast.augment import AugmentationPolicy
from pucontrast.data import PUDataset, SplitSpec, gaussian_mixture, scar_label_split
from pucontrast.errors import CompositionError, ConfigError, DimensionError, LabelError, TrainingError
from pucontrast.losses import ContrastiveConfig
from pucontrast.models import MLP, init_classifier, init_encoder, init_projector, parameter_digest
from pucontrast.autodiff import Tensor
from pucontrast.training import (
    AdamState,
    ClassifierConfig,
    PretrainConfig,
    PriorSweepConfig,
    adam_update,
    pretrain,
    prior_sweep,
    train_classifier,
    train_end_to_end,
    train_supervised_baseline,
)

SMALL = dict(hidden=(8,), repr_dim=4)
PRE = dict(hidden=(16,), repr_dim=16, proj_dim=4)


def identity_encoder(d):
    return MLP("encoder", (d, d), {"W0": Tensor(np.eye(d)), "b0": Tensor(np.zeros(d))})


@pytest.fixture(scope="module")
def pu():
    src = gaussian_mixture(1100, 4, "1:10", 4.0, seed=0)
    return scar_label_split(src, SplitSpec({1}, 0.3, seed=0))


@pytest.fixture(scope="module")
def test_set():
    src = gaussian_mixture(400, 4, "1:1", 4.0, seed=99)
    return PUDataset(src.features, np.zeros(400), np.where(src.class_ids == 1, 1, -1))


# Adam

def test_adam_zero_gradient_keeps_parameters():
    p = {"w": np.array([1.0, -2.0])}
    new, state = adam_update(AdamState(), p, {"w": np.zeros(2)})
    assert np.array_equal(new["w"], p["w"]) and state.step == 1


def test_adam_first_step_is_learning_rate():
    new, _ = adam_update(AdamState(lr=3e-4), {"w": np.zeros(3)}, {"w": np.ones(3)})
    assert np.allclose(new["w"], -3e-4 / (1 + 1e-8), rtol=1e-15, atol=0)


def test_adam_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=25)
    p, state = {"w": np.array([0.7])}, AdamState(lr=1e-2)
    for g in grads:
        p, state = adam_update(state, p, {"w": np.array([g])})
    assert p["w"][0] == pytest.approx(oracles.adam(0.7, grads.tolist(), 1e-2), abs=1e-15)


def test_adam_rejects_bad_gradients():
    with pytest.raises(TrainingError, match="'layer.W'"):
        adam_update(AdamState(), {"layer.W": np.zeros(2)}, {"layer.W": np.array([1.0, np.nan])})
    with pytest.raises(DimensionError):
        adam_update(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})


# configs

def test_config_validation():
    with pytest.raises(ConfigError):
        PretrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        PretrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        ClassifierConfig(loss="hinge")
    with pytest.raises(ConfigError):
        PriorSweepConfig((0.5, 0.0), 0.1)
    with pytest.raises(ConfigError):
        PriorSweepConfig((1.0, 10.0), 0.2)


def test_distorted_prior_arithmetic():
    pi = 2400 / 32_400
    assert 10 * pi == pytest.approx(0.7407, abs=1e-4)
    PriorSweepConfig((0.1, 1.0, 10.0), pi)


# pretraining

def test_zero_learning_rate_leaves_initialization(pu):
    cfg = PretrainConfig(epochs=1, batch_size=64, lr=0.0, hidden=(), repr_dim=16, proj_dim=4, seed=4)
    res = pretrain(pu, cfg)
    assert parameter_digest(res.encoder) == parameter_digest(init_encoder(4, (), 16, seed=4))
    assert parameter_digest(res.projector) == parameter_digest(init_projector(16, 4, seed=4))
    assert len(res.trace) == 1


def test_pretraining_ignores_labels(pu):
    cfg = PretrainConfig(epochs=2, batch_size=128, seed=1, **PRE)
    flipped = PUDataset(pu.features, 1 - pu.s)
    a, b = pretrain(pu, cfg), pretrain(flipped, cfg)
    assert parameter_digest(a.encoder) == parameter_digest(b.encoder)


def test_biased_pretraining_path(pu):
    cfg = PretrainConfig(epochs=1, batch_size=128, contrastive=ContrastiveConfig(tau_plus=0.0), **PRE)
    res = pretrain(pu, cfg)
    assert res.encoder.provenance["loss"] == "biased_contrastive"
    assert res.encoder.provenance["epochs"] == 1


def test_pretraining_is_deterministic(pu):
    cfg = PretrainConfig(epochs=2, batch_size=100, seed=7, **PRE)
    a, b = pretrain(pu, cfg), pretrain(pu, cfg)
    assert parameter_digest(a.encoder) == parameter_digest(b.encoder)
    assert [r.loss for r in a.trace] == [r.loss for r in b.trace]
    c = pretrain(pu, replace(cfg, seed=8))
    assert parameter_digest(a.encoder) != parameter_digest(c.encoder)


def test_pretraining_divergence_names_epoch():
    x = np.full((8, 2), 1e308)
    enc = MLP("encoder", (2, 2), {"W0": Tensor(np.ones((2, 2))), "b0": Tensor(np.zeros(2))})
    cfg = PretrainConfig(epochs=1, batch_size=4, repr_dim=2, proj_dim=2, augmentation=AugmentationPolicy.identity())
    with pytest.raises(TrainingError, match="epoch 1"):
        pretrain(x, cfg, encoder=enc)


def test_pretraining_needs_a_full_batch():
    with pytest.raises(ConfigError):
        pretrain(np.zeros((10, 2)), PretrainConfig(batch_size=16))


def test_pretraining_loss_decreases_on_separated_mixture():
    # Directional check: per-epoch mean loss never rises over 20 epochs in at least 4 of 5 seeds.
    monotone = 0
    for seed in range(5):
        data = gaussian_mixture(11_000, 16, "1:10", 8.0, seed=seed)
        cfg = PretrainConfig(
            epochs=20, batch_size=256, lr=3e-4, hidden=(32,), repr_dim=16, proj_dim=8, seed=seed,
            augmentation=AugmentationPolicy.from_list([{"kind": "noise", "sigma": 0.3}]),
        )
        losses = np.array([r.loss for r in pretrain(data.features, cfg).trace])
        monotone += bool(np.all(np.diff(losses) <= 0))
    assert monotone >= 4


# classifier

def test_zero_learning_rate_classifier(pu):
    enc = init_encoder(4, (8,), 4, seed=2)
    before = parameter_digest(enc)
    res = train_classifier(enc, pu, ClassifierConfig(epochs=2, lr=0.0, seed=5, pi=0.2))
    assert parameter_digest(res.classifier) == parameter_digest(init_classifier(4, seed=5))
    assert parameter_digest(enc) == before


@pytest.mark.parametrize("loss", ["imbnnpu", "nnpu", "wbce", "bce"])
def test_encoder_is_frozen(pu, loss):
    enc = init_encoder(4, (8,), 4, seed=2)
    before = parameter_digest(enc)
    train_classifier(enc, pu, ClassifierConfig(epochs=3, lr=1e-2, loss=loss))
    assert parameter_digest(enc) == before


def test_imbnnpu_lowers_training_loss(pu):
    res = train_classifier(identity_encoder(4), pu, ClassifierConfig(epochs=30, lr=1e-2))
    losses = [r.loss for r in res.trace]
    assert losses[-1] < losses[0]
    assert all(v >= 0 for v in losses)


def test_training_losses_are_non_negative(pu):
    for loss in ("imbnnpu", "nnpu"):
        res = train_classifier(identity_encoder(4), pu, ClassifierConfig(epochs=40, lr=5e-2, pi=0.05, loss=loss))
        assert min(r.loss for r in res.trace) >= 0


def test_nnpu_and_imbnnpu_coincide_when_shares_match(pu):
    pi = pu.pi_true
    a = train_classifier(identity_encoder(4), pu, ClassifierConfig(epochs=3, lr=1e-2, pi=pi, pi_prime=pi))
    b = train_classifier(identity_encoder(4), pu, ClassifierConfig(epochs=3, lr=1e-2, pi=pi, pi_prime=pi, loss="nnpu"))
    assert np.allclose(a.classifier.params["w"].data, b.classifier.params["w"].data, rtol=0, atol=1e-12)


@pytest.mark.parametrize("loss", ["bce", "wbce"])
def test_benchmark_losses_need_true_labels(pu, loss):
    unlabeled = PUDataset(pu.features, pu.s)
    with pytest.raises(LabelError):
        train_classifier(identity_encoder(4), unlabeled, ClassifierConfig(loss=loss))


def test_pu_data_needs_both_kinds():
    data = PUDataset(np.zeros((10, 2)), np.zeros(10))
    with pytest.raises(CompositionError):
        train_classifier(identity_encoder(2), data, ClassifierConfig(pi=0.5))


def test_prior_required_when_not_derivable():
    data = PUDataset(np.random.default_rng(0).normal(size=(20, 2)), np.r_[np.ones(5), np.zeros(15)])
    with pytest.raises(ConfigError, match="prior"):
        train_classifier(identity_encoder(2), data, ClassifierConfig(epochs=1))


def test_classifier_training_is_deterministic(pu, test_set):
    cfg = ClassifierConfig(epochs=3, lr=1e-2, seed=3)
    a = train_classifier(identity_encoder(4), pu, cfg, eval_data=test_set)
    b = train_classifier(identity_encoder(4), pu, cfg, eval_data=test_set)
    assert parameter_digest(a.classifier) == parameter_digest(b.classifier)
    assert a.trace == b.trace and a.trace[0].metrics is not None


def test_end_to_end_updates_encoder(pu):
    enc = init_encoder(4, (8,), 4, seed=0)
    res = train_end_to_end(pu, ClassifierConfig(epochs=2, lr=1e-2, **SMALL), encoder=enc)
    assert parameter_digest(res.encoder) != parameter_digest(enc)
    assert res.classifier.provenance["labels"] == "pu"


# supervised baseline

def test_supervised_weight_follows_class_ratio(pu):
    res = train_supervised_baseline(identity_encoder(4), pu, ClassifierConfig(epochs=1))
    assert res.classifier.provenance["w_pos"] == 10.0
    balanced = gaussian_mixture(200, 4, "1:1", 4.0, seed=0)
    data = PUDataset(balanced.features, np.zeros(200), np.where(balanced.class_ids == 1, 1, -1))
    res = train_supervised_baseline(None, data, ClassifierConfig(epochs=1, **SMALL))
    assert res.classifier.provenance["w_pos"] == 1.0


def test_supervised_needs_true_labels(pu):
    with pytest.raises(LabelError):
        train_supervised_baseline(None, PUDataset(pu.features, pu.s), ClassifierConfig())


# sweep

def test_sweep_rows_and_neutral_factor(pu, test_set):
    enc = identity_encoder(4)
    cfg = ClassifierConfig(epochs=3, lr=1e-2, seed=1)
    rows = prior_sweep(enc, pu, test_set, PriorSweepConfig((0.5, 1.0, 2.0), pu.pi_true, cfg))
    assert len(rows) == 3 * 3
    assert [r.b_dis for r in rows] == [0.5] * 3 + [1.0] * 3 + [2.0] * 3
    plain = train_classifier(enc, pu, replace(cfg, pi=pu.pi_true), eval_data=test_set)
    neutral = [r for r in rows if r.b_dis == 1.0]
    assert [(r.loss, r.metrics) for r in neutral] == [(t.loss, t.metrics) for t in plain.trace]


def test_sweep_needs_labeled_test(pu):
    with pytest.raises(LabelError):
        prior_sweep(identity_encoder(4), pu, PUDataset(pu.features, pu.s), PriorSweepConfig((1.0,), 0.1))


def test_prior_acts_only_through_the_clamp_at_even_share(pu):
    # With pi' = 1/2 the unclamped loss is a pi-dependent multiple of a pi-free risk,
    # and Adam is scale invariant up to eps, so small priors train the same classifier.
    a, b = (train_classifier(identity_encoder(4), pu, ClassifierConfig(epochs=20, lr=1e-2, pi=pi)).classifier
            for pi in (0.02, 0.08))
    assert np.allclose(a.params["w"].data, b.params["w"].data, rtol=0, atol=1e-6)
    c = train_classifier(identity_encoder(4), pu, ClassifierConfig(epochs=20, lr=1e-2, pi=0.9)).classifier
    assert not np.allclose(a.params["w"].data, c.params["w"].data, atol=1e-2)
