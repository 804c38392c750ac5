import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from pucontrast.data import (
    CIFAR10_POSITIVE,
    CIFAR100_POSITIVE,
    LabeledDataset,
    PUDataset,
    SplitSpec,
    binarize,
    cifar10_shaped,
    cifar100_shaped,
    epoch_batches,
    gaussian_mixture,
    load_dataset,
    parse_ratio,
    sample_minibatch,
    save_dataset,
    scar_label_split,
)
from pucontrast.errors import CompositionError, ConfigError, ContractError, DegenerateInputError, ParseError, SchemaError
from pucontrast.metrics import auc
from pucontrast.rng import make_rng


@pytest.fixture(scope="module")
def cifar10_train():
    return cifar10_shaped(d=4, seed=0)


# ratios

@pytest.mark.parametrize("text,expected", [("1:10", (1, 10)), ("2:4", (2, 4)), ((3, 9), (3, 9)), ([0, 5], (0, 5))])
def test_parse_ratio(text, expected):
    assert parse_ratio(text) == expected


@pytest.mark.parametrize("bad", ["1-10", "a:b", "0:0", "-1:3"])
def test_parse_ratio_rejects(bad):
    with pytest.raises(ConfigError):
        parse_ratio(bad)


# SCAR split

def test_cifar10_shaped_split_counts(cifar10_train):
    assert np.sum(np.isin(cifar10_train.class_ids, CIFAR10_POSITIVE)) == 20_000
    pu = scar_label_split(cifar10_train, SplitSpec(CIFAR10_POSITIVE, 0.2, "1:10", seed=3))
    c = pu.counts()
    assert (c["labeled"], c["unlabeled_pos"], c["unlabeled_neg"]) == (600, 2400, 30_000)
    assert c["positives"] * 10 == c["negatives"]
    assert c["labeled"] * 54 == c["unlabeled"]
    assert pu.pi_true == pytest.approx(2400 / 32_400, abs=1e-15)


def test_cifar100_shaped_split_counts():
    src = cifar100_shaped(d=4, seed=1)
    pu = scar_label_split(src, SplitSpec(CIFAR100_POSITIVE, 0.2, seed=0))
    assert (pu.n_labeled, pu.n_unlabeled) == (1000, 49_000)
    assert pu.counts()["positives"] == 5000


def test_full_label_frequency_leaves_no_unlabeled_positives():
    src = gaussian_mixture(220, 3, "1:10", 2.0, seed=0)
    pu = scar_label_split(src, SplitSpec({1}, 1.0, seed=0))
    assert pu.counts()["unlabeled_pos"] == 0
    assert pu.pi_true == 0.0


def test_zero_label_frequency_is_degenerate():
    with pytest.raises(DegenerateInputError, match="no labeled positives"):
        SplitSpec({1}, 0.0)


def test_label_count_rounding_to_zero_is_degenerate():
    src = gaussian_mixture(110, 3, "1:10", 2.0, seed=0)
    with pytest.raises(DegenerateInputError, match="no labeled positives"):
        scar_label_split(src, SplitSpec({1}, 0.01, seed=0))


def test_unachievable_ratio_is_config_error():
    src = gaussian_mixture(110, 3, "1:10", 2.0, seed=0)
    with pytest.raises(ConfigError, match="unachievable"):
        scar_label_split(src, SplitSpec({1}, 0.5, "1:1", seed=0))


@pytest.mark.parametrize("pos", [{0, 1}, {7}])
def test_positive_classes_must_be_strict_subset(pos):
    src = gaussian_mixture(110, 3, "1:10", 2.0, seed=0)
    with pytest.raises(ConfigError):
        scar_label_split(src, SplitSpec(pos, 0.5, seed=0))


def test_split_spec_rejects_c_above_one_and_empty_positives():
    with pytest.raises(ConfigError):
        SplitSpec({1}, 1.5)
    with pytest.raises(ConfigError):
        SplitSpec(set(), 0.5)


@given(st.integers(0, 1000), st.floats(0.05, 1.0), st.sampled_from(["1:10", "1:4", "1:2"]))
def test_scar_invariants(seed, c, ratio):
    src = gaussian_mixture(400, 2, "1:3", 1.0, seed=seed)
    try:
        pu = scar_label_split(src, SplitSpec({1}, c, ratio, seed=seed))
    except (DegenerateInputError, ConfigError):
        return
    n_pos = pu.counts()["positives"]
    assert pu.n_labeled == round(c * n_pos)
    assert np.all(pu.y_true[pu.s == 1] == 1)
    unl = pu.s == 0
    if unl.any():
        assert abs(pu.pi_true - np.mean(pu.y_true[unl] == 1)) <= 1e-12
    p, q = parse_ratio(ratio)
    assert n_pos == round(pu.counts()["negatives"] * p / q)


def test_split_is_deterministic_and_seed_sensitive():
    src = gaussian_mixture(1100, 3, "1:10", 2.0, seed=0)
    a = scar_label_split(src, SplitSpec({1}, 0.2, seed=5))
    b = scar_label_split(src, SplitSpec({1}, 0.2, seed=5))
    c = scar_label_split(src, SplitSpec({1}, 0.2, seed=6))
    assert np.array_equal(a.s, b.s) and np.array_equal(a.features, b.features)
    assert not np.array_equal(a.s, c.s)


def test_binarize_keeps_test_balance():
    test = binarize(cifar10_shaped(d=3, seed=0, train=False), CIFAR10_POSITIVE)
    assert test.n_labeled == 0
    assert test.counts()["positives"] == 4000 and test.counts()["negatives"] == 6000


# dataset invariants

def test_pu_dataset_rejects_labeled_negative():
    with pytest.raises(ContractError):
        PUDataset(np.zeros((2, 1)), [1, 0], [-1, 1])


def test_pu_dataset_rejects_bad_flags():
    with pytest.raises(SchemaError):
        PUDataset(np.zeros((2, 1)), [2, 0])
    with pytest.raises(SchemaError):
        PUDataset(np.zeros((2, 1)), [1, 0], [1, 0])


def test_pu_dataset_checks_stated_prior():
    with pytest.raises(ContractError):
        PUDataset(np.zeros((3, 1)), [1, 0, 0], [1, 1, -1], pi_true=0.9)
    assert PUDataset(np.zeros((3, 1)), [1, 0, 0], [1, 1, -1], pi_true=0.5).pi_true == 0.5


# generators

def test_gaussian_mixture_counts_and_determinism():
    a = gaussian_mixture(1100, 5, "1:10", 3.0, seed=4)
    b = gaussian_mixture(1100, 5, "1:10", 3.0, seed=4)
    assert np.sum(a.class_ids == 1) == 100 and np.sum(a.class_ids == 0) == 1000
    assert np.array_equal(a.features, b.features) and np.array_equal(a.class_ids, b.class_ids)


def test_gaussian_mixture_cluster_centres():
    g = gaussian_mixture(20_000, 3, "1:1", 4.0, seed=0)
    pos = g.features[g.class_ids == 1].mean(axis=0)
    neg = g.features[g.class_ids == 0].mean(axis=0)
    assert pos[0] == pytest.approx(2.0, abs=0.05) and neg[0] == pytest.approx(-2.0, abs=0.05)
    assert np.all(np.abs(pos[1:]) < 0.05)


def test_well_separated_mixture_is_linearly_separable():
    g = gaussian_mixture(4000, 2, "1:1", 8.0, seed=0)
    y = np.where(g.class_ids == 1, 1, -1)
    assert auc(g.features[:, 0], y) > 0.99


@pytest.mark.parametrize("kw", [dict(n=5, pn_ratio="1:10"), dict(n=1), dict(class_separation=0.0), dict(d=0)])
def test_gaussian_mixture_rejects(kw):
    args = dict(n=100, d=2, pn_ratio="1:1", class_separation=1.0, seed=0)
    args.update(kw)
    with pytest.raises(ConfigError):
        gaussian_mixture(**args)


# CSV

def test_round_trip_pu_with_labels(tmp_path):
    rng = np.random.default_rng(0)
    ds = PUDataset(rng.normal(size=(3, 2)) * 1e-7, [1, 0, 0], [1, -1, 1])
    save_dataset(ds, tmp_path / "a.csv")
    back = load_dataset(tmp_path / "a.csv")
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.s, ds.s) and np.array_equal(back.y_true, ds.y_true)
    raw = (tmp_path / "a.csv").read_bytes()
    assert b"\r" not in raw and raw.startswith(b"f0,f1,s,y\n")


def test_round_trip_labeled(tmp_path):
    src = gaussian_mixture(10, 3, "1:1", 1.0, seed=0)
    save_dataset(src, tmp_path / "l.csv")
    back = load_dataset(tmp_path / "l.csv", "labeled")
    assert np.array_equal(back.features, src.features) and np.array_equal(back.class_ids, src.class_ids)
    assert isinstance(load_dataset(tmp_path / "l.csv", "auto"), LabeledDataset)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
def test_round_trip_is_exact_for_any_float(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    ds = PUDataset(np.array(values).reshape(-1, 1), [0] * len(values))
    save_dataset(ds, path)
    assert np.array_equal(load_dataset(path).features, ds.features)


def test_missing_s_column_is_schema_error(tmp_path):
    (tmp_path / "x.csv").write_text("f0,f1\n1,2\n")
    with pytest.raises(SchemaError, match="'s'"):
        load_dataset(tmp_path / "x.csv", "pu")


def test_y_column_populates_labels(tmp_path):
    (tmp_path / "x.csv").write_text("f0,s,y\n1.5,1,1\n-2,0,-1\n0,0,1\n")
    ds = load_dataset(tmp_path / "x.csv")
    assert list(ds.y_true) == [1, -1, 1] and ds.pi_true == 0.5


def test_malformed_row_reports_line(tmp_path):
    (tmp_path / "x.csv").write_text("f0,s\n1.0,0\nabc,1\n")
    with pytest.raises(ParseError, match=":3:"):
        load_dataset(tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("f0,s\n1.0,0\n2.0\n")
    with pytest.raises(ParseError, match=":3:"):
        load_dataset(tmp_path / "y.csv")


def test_s_outside_binary_is_schema_error(tmp_path):
    (tmp_path / "x.csv").write_text("f0,s\n1.0,0\n2.0,3\n")
    with pytest.raises(SchemaError, match=":3:"):
        load_dataset(tmp_path / "x.csv")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope.csv")


# minibatches

def _pu(n_lab, n_unl, d=1):
    return PUDataset(np.zeros((n_lab + n_unl, d)), np.r_[np.ones(n_lab), np.zeros(n_unl)])


def test_full_batch_is_permutation():
    ds = _pu(3, 7)
    idx = sample_minibatch(ds, 10, make_rng(0, "t"))
    assert sorted(idx.tolist()) == list(range(10))


def test_minibatch_determinism():
    ds = _pu(5, 50)
    a = sample_minibatch(ds, 8, make_rng(1, "t"))
    b = sample_minibatch(ds, 8, make_rng(1, "t"))
    assert np.array_equal(a, b)


def test_expected_labeled_per_batch_matches_hypergeometric_mean():
    ds = _pu(600, 32_400)
    rng = make_rng(0, "hyper")
    counts = [ds.s[sample_minibatch(ds, 128, rng)].sum() for _ in range(10_000)]
    assert np.mean(counts) == pytest.approx(128 * 600 / 33_000, abs=0.05)


def test_both_kinds_flag():
    ds = _pu(1, 200)
    rng = make_rng(0, "both")
    for _ in range(20):
        idx = sample_minibatch(ds, 16, rng, require_both_kinds=True)
        assert 0 < ds.s[idx].sum() < 16
    with pytest.raises(CompositionError):
        sample_minibatch(_pu(0, 10), 4, rng, require_both_kinds=True)


def test_batch_size_bounds():
    with pytest.raises(ConfigError):
        sample_minibatch(_pu(1, 3), 5, make_rng(0))


def test_epoch_batches_partition():
    batches = epoch_batches(10, 4, make_rng(0, "e"))
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))
    assert [len(b) for b in epoch_batches(9, 4, make_rng(0, "e"), min_size=2)] == [4, 4]


def test_rng_streams_are_independent_of_each_other():
    a = make_rng(3, "x", 1).random(3)
    assert np.array_equal(a, make_rng(3, "x", 1).random(3))
    assert not np.array_equal(a, make_rng(3, "x", 2).random(3))
    assert not np.array_equal(a, make_rng(4, "x", 1).random(3))


def test_oracle_helpers_agree_on_trivial_case():
    assert oracles.auc([1.0, 0.0], [1, -1]) == 1.0
