"""Command-line interface: ``pucontrast {synth,pretrain,train,eval,sweep,check}``.

Exit codes: 0 success, 1 failed check or training failure, 2 bad input or
configuration. Flags override config-file fields, and the resolved config is
what gets digested into the run manifest.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig, RunManifest, load_config, read_manifest
from .data import (
    PUDataset,
    SplitSpec,
    binarize,
    cifar10_shaped,
    cifar100_shaped,
    gaussian_mixture,
    load_dataset,
    save_dataset,
    scar_label_split,
)
from .errors import ConfigError, InputError, LabelError, PUContrastError
from .metrics import MetricsRecord, evaluate_model
from .models import load_checkpoint, save_checkpoint
from .rng import child_seed
from .training import (
    PriorSweepConfig,
    config_digest,
    pretrain,
    prior_sweep,
    train_classifier,
    train_end_to_end,
    train_supervised_baseline,
)

TRACE_COLUMNS = ["run_id", "epoch", "loss", "accuracy", "f1", "auc"]
SWEEP_COLUMNS = ["run_id", "b_dis", "epoch", "loss", "accuracy", "f1", "auc"]
METRICS_COLUMNS = ["run_id", "accuracy", "f1", "auc", "n_test", "threshold"]


def _num(v) -> str:
    """Locale-independent shortest round-trip text for a float."""
    return "" if v is None else repr(float(v))


def _metric_cells(m: Optional[MetricsRecord]) -> list:
    return [_num(m.accuracy), _num(m.f1), _num(m.auc)] if m is not None else ["", "", ""]


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_trace(path, run_id: str, trace) -> None:
    _write_csv(Path(path), TRACE_COLUMNS, [[run_id, r.epoch, _num(r.loss), *_metric_cells(r.metrics)] for r in trace])


def write_sweep(path, run_id: str, rows) -> None:
    _write_csv(Path(path), SWEEP_COLUMNS,
               [[run_id, _num(r.b_dis), r.epoch, _num(r.loss), *_metric_cells(r.metrics)] for r in rows])


def write_metrics(path, run_id: str, m: MetricsRecord) -> None:
    _write_csv(Path(path), METRICS_COLUMNS,
               [[run_id, _num(m.accuracy), _num(m.f1), _num(m.auc), m.n_test, _num(m.threshold)]])


# ---------------------------------------------------------------------------
# argument parsing


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="top-level seed (unsigned 64-bit)")
    common.add_argument("--out", metavar="DIR", help="output directory")

    parser = argparse.ArgumentParser(prog="pucontrast", description="PU learning with contrastive pretraining.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize train/test PU datasets")
    p.add_argument("--generator", dest="data.generator")
    p.add_argument("--n", type=int, dest="data.n")
    p.add_argument("--d", type=int, dest="data.d")
    p.add_argument("--pn-ratio", dest="data.pn_ratio")
    p.add_argument("--separation", type=float, dest="data.separation")
    p.add_argument("--test-n", type=int, dest="data.test_n")
    p.add_argument("--test-pn-ratio", dest="data.test_pn_ratio")
    p.add_argument("--positive-classes", type=_int_list, dest="data.positive_class_ids")
    p.add_argument("--label-frequency", "-c", type=float, dest="data.label_frequency")
    p.add_argument("--target-pn-ratio", dest="data.target_pn_ratio")

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining of encoder and projector")
    p.add_argument("--data", required=True, help="training CSV (labels are ignored)")
    p.add_argument("--epochs", type=int, dest="pretrain.epochs")
    p.add_argument("--batch-size", type=int, dest="pretrain.batch_size")
    p.add_argument("--lr", type=float, dest="pretrain.lr")
    p.add_argument("--tau", type=float, dest="pretrain.tau")
    p.add_argument("--tau-plus", type=float, dest="pretrain.tau_plus")
    p.add_argument("--views", type=int, dest="pretrain.views")

    def classifier_flags(p):
        p.add_argument("--data", required=True, help="PU training CSV")
        p.add_argument("--test", help="labeled test CSV for per-epoch metrics")
        p.add_argument("--epochs", type=int, dest="classifier.epochs")
        p.add_argument("--batch-size", type=int, dest="classifier.batch_size")
        p.add_argument("--lr", type=float, dest="classifier.lr")
        p.add_argument("--pi", help="class prior among unlabeled: a number or a synth manifest path")
        p.add_argument("--pi-prime", type=float, dest="classifier.pi_prime")

    p = sub.add_parser("train", parents=[common], help="train a classifier")
    classifier_flags(p)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--encoder", help="frozen encoder checkpoint")
    which.add_argument("--scratch", action="store_true", help="train encoder and classifier jointly from scratch")
    p.add_argument("--loss", dest="classifier.loss", choices=["imbnnpu", "nnpu", "wbce", "bce"])
    p.add_argument("--supervised", action="store_true", help="fit (w)BCE on the true labels instead of s")

    p = sub.add_parser("eval", parents=[common], help="evaluate a classifier on labeled test data")
    p.add_argument("--classifier", required=True)
    p.add_argument("--encoder", help="encoder checkpoint; omit to score raw features")
    p.add_argument("--test", required=True)
    p.add_argument("--threshold", type=float, default=0.0)

    p = sub.add_parser("sweep", parents=[common], help="train under distorted class priors")
    classifier_flags(p)
    p.add_argument("--encoder", required=True)
    p.add_argument("--b-dis", type=_float_list, dest="sweep.factors", help="comma-separated distortion factors")

    p = sub.add_parser("check", parents=[common], help="run the theory or gradient checks")
    p.add_argument("--suite", choices=["theory", "gradients"], required=True)
    p.add_argument("--trials", type=int, default=1000, help="draws for the theory suite")
    p.add_argument("--configs", type=int, default=100, help="random configurations per gradient check")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {k: v for k, v in vars(args).items() if "." in k}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["out"] = args.out
    return out


def _out_dir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _run_id(resolved: dict) -> str:
    """Short id of an experiment; independent of where its outputs are written."""
    return config_digest({k: v for k, v in resolved.items() if k != "out"})[:12]


def _resolve_pi(arg: Optional[str]) -> Optional[float]:
    """``None`` leaves the prior to be derived from the data's y column."""
    if arg is None:
        return None
    try:
        return float(arg)
    except ValueError:
        pass
    pi = read_manifest(arg).get("results", {}).get("pi_true")
    if pi is None:
        raise ConfigError(f"{arg}: manifest records no pi_true")
    return float(pi)


# ---------------------------------------------------------------------------
# commands


def make_datasets(cfg: ExperimentConfig) -> tuple[PUDataset, PUDataset]:
    """Training PU split and fully labeled test set described by ``cfg.data``."""
    d = cfg.data
    seed_train, seed_test = child_seed(cfg.seed, "data", "train"), child_seed(cfg.seed, "data", "test")
    spec = SplitSpec(d.positive_class_ids, d.label_frequency, d.target_pn_ratio, child_seed(cfg.seed, "split"))
    if d.generator == "gaussian_mixture":
        src = gaussian_mixture(d.n, d.d, d.pn_ratio, d.separation, seed_train, name="train")
        test_src = gaussian_mixture(d.test_n, d.d, d.test_pn_ratio, d.separation, seed_test, name="test")
    else:
        make = cifar10_shaped if d.generator == "cifar10_shaped" else cifar100_shaped
        src = make(d.d, d.separation, seed_train, train=True)
        test_src = make(d.d, d.separation, seed_test, train=False)
    return scar_label_split(src, spec), binarize(test_src, d.positive_class_ids)


def cmd_synth(cfg: ExperimentConfig) -> RunManifest:
    t0 = time.perf_counter()
    train, test = make_datasets(cfg)
    out = _out_dir(cfg)
    man = RunManifest("synth", cfg.to_dict(), cfg.digest())
    for name, ds in (("train", train), ("test", test)):
        save_dataset(ds, out / f"{name}.csv")
        man.add_output(name, out / f"{name}.csv")
    man.results = {"pi_true": train.pi_true, "train_counts": train.counts(), "test_counts": test.counts()}
    man.timings = {"total_s": time.perf_counter() - t0}
    return man


def cmd_pretrain(cfg: ExperimentConfig, data_path: str) -> RunManifest:
    t0 = time.perf_counter()
    data = load_dataset(data_path, "auto")
    x = data.features
    result = pretrain(x, cfg.pretrain)
    out = _out_dir(cfg)
    man = RunManifest("pretrain", cfg.to_dict(), cfg.digest())
    man.add_input("data", data_path)
    enc_digest = save_checkpoint(result.encoder, out / "encoder.json")
    proj_digest = save_checkpoint(result.projector, out / "projector.json")
    write_trace(out / "pretrain_trace.csv", _run_id({**cfg.to_dict(), "step": "pretrain"}), result.trace)
    for name in ("encoder.json", "projector.json", "pretrain_trace.csv"):
        man.add_output(name.split(".")[0], out / name)
    man.results = {"encoder_digest": enc_digest, "projector_digest": proj_digest,
                   "final_loss": result.trace[-1].loss}
    man.timings = {"total_s": time.perf_counter() - t0}
    return man


def _load_test(path: Optional[str]):
    if path is None:
        return None
    test = load_dataset(path, "pu")
    if test.y_true is None:
        raise LabelError(f"{path}: test data needs a y column")
    return test


def cmd_train(cfg: ExperimentConfig, args) -> RunManifest:
    t0 = time.perf_counter()
    data = load_dataset(args.data, "pu")
    test = _load_test(args.test)
    ccfg = replace(cfg.classifier, pi=_resolve_pi(args.pi))
    encoder = load_checkpoint(args.encoder, "encoder") if args.encoder else None
    if args.supervised:
        result = train_supervised_baseline(encoder, data, ccfg, eval_data=test)
        mode = "supervised"
    elif encoder is None:
        result = train_end_to_end(data, ccfg, eval_data=test)
        mode = "scratch"
    else:
        result = train_classifier(encoder, data, ccfg, eval_data=test)
        mode = "probe"
    out = _out_dir(cfg)
    resolved = {**cfg.to_dict(), "classifier": ccfg.to_dict(), "mode": mode}
    man = RunManifest("train", resolved, config_digest(resolved))
    man.add_input("data", args.data)
    if args.encoder:
        man.add_input("encoder", args.encoder)
    if test is not None:
        man.add_input("test", args.test)
    digests = {"classifier": save_checkpoint(result.classifier, out / "classifier.json")}
    man.add_output("classifier", out / "classifier.json")
    if result.encoder is not None:
        digests["encoder"] = save_checkpoint(result.encoder, out / "encoder.json")
        man.add_output("encoder", out / "encoder.json")
    write_trace(out / "train_trace.csv", _run_id(resolved), result.trace)
    man.add_output("trace", out / "train_trace.csv")
    last = result.trace[-1]
    man.results = {"digests": digests, "final_loss": last.loss,
                   "final_metrics": last.metrics.as_dict() if last.metrics else None}
    man.timings = {"total_s": time.perf_counter() - t0}
    return man


def cmd_eval(cfg: ExperimentConfig, args) -> RunManifest:
    t0 = time.perf_counter()
    clf = load_checkpoint(args.classifier, "classifier")
    enc = load_checkpoint(args.encoder, "encoder") if args.encoder else None
    test = _load_test(args.test)
    m = evaluate_model(enc, clf, test, threshold=args.threshold)
    out = _out_dir(cfg)
    man = RunManifest("eval", {**cfg.to_dict(), "threshold": args.threshold}, "")
    man.add_input("classifier", args.classifier)
    if args.encoder:
        man.add_input("encoder", args.encoder)
    man.add_input("test", args.test)
    man.config["inputs"] = {k: v["sha256"] for k, v in man.inputs.items()}
    man.config_digest = config_digest(man.config)
    write_metrics(out / "metrics.csv", _run_id(man.config), m)
    man.add_output("metrics", out / "metrics.csv")
    man.results = m.as_dict()
    man.timings = {"total_s": time.perf_counter() - t0}
    return man


def cmd_sweep(cfg: ExperimentConfig, args) -> RunManifest:
    t0 = time.perf_counter()
    data = load_dataset(args.data, "pu")
    test = _load_test(args.test)
    if test is None:
        raise ConfigError("sweep needs --test")
    encoder = load_checkpoint(args.encoder, "encoder")
    base_pi = _resolve_pi(args.pi)
    if base_pi is None:
        base_pi = data.pi_true
    if base_pi is None:
        raise ConfigError("class prior unknown: data has no y column; pass --pi VALUE or --pi MANIFEST")
    sweep = PriorSweepConfig(cfg.sweep.factors, base_pi, cfg.classifier)
    rows = prior_sweep(encoder, data, test, sweep)
    out = _out_dir(cfg)
    resolved = {**cfg.to_dict(), "base_pi": base_pi}
    man = RunManifest("sweep", resolved, config_digest(resolved))
    man.add_input("data", args.data)
    man.add_input("test", args.test)
    man.add_input("encoder", args.encoder)
    write_sweep(out / "sweep.csv", _run_id(resolved), rows)
    man.add_output("sweep", out / "sweep.csv")
    final = {}
    for r in rows:
        if r.epoch == sweep.classifier.epochs:
            final[_num(r.b_dis)] = r.metrics.as_dict()
    man.results = {"final_metrics": final}
    man.timings = {"total_s": time.perf_counter() - t0}
    return man


def cmd_check(cfg: ExperimentConfig, args) -> tuple[RunManifest, list, list]:
    from . import theory

    t0 = time.perf_counter()
    failures = []
    lines = []
    if args.suite == "theory":
        rep = theory.theory_suite(args.trials, seed=cfg.seed)
        lem, eq = rep["risk_bound"], rep["equivalence"]
        lines.append(f"risk bound: trials: {lem.trials} violations: {lem.violations} max gap: {lem.max_slack:.3e}")
        lines.append(f"kernel grid: violations: {rep['kernel_grid_violations']}")
        lines.append(f"equivalence: trials: {eq.trials} max |diff|: {eq.max_abs_diff:.3e}")
        total = lem.violations + rep["kernel_grid_violations"] + (0 if eq.passed else 1)
        lines.append(f"violations: {total}")
        if not lem.passed:
            failures.append("risk_bound")
        if rep["kernel_grid_violations"]:
            failures.append("kernel_grid")
        if not eq.passed:
            failures.append("equivalence")
        results = {"risk_bound": _report_dict(lem), "kernel_grid_violations": rep["kernel_grid_violations"],
                   "equivalence": _report_dict(eq)}
    else:
        reports = theory.gradient_check_suite(args.configs, seed=cfg.seed)
        results = {}
        for r in reports:
            branches = " ".join(f"{k}={v}" for k, v in r.branch_counts.items())
            lines.append(f"{r.name}: configs: {r.configs} max rel error: {r.max_rel_error:.3e} {branches}".rstrip())
            if not r.passed:
                failures.append(r.name)
            results[r.name] = {"configs": r.configs, "max_rel_error": r.max_rel_error,
                               "branch_counts": r.branch_counts, "passed": r.passed}
    lines.append("all checks passed" if not failures else f"failing: {', '.join(failures)}")
    resolved = {**cfg.to_dict(), "suite": args.suite, "trials": args.trials, "configs": args.configs}
    man = RunManifest("check", resolved, config_digest(resolved), results=results)
    man.timings = {"total_s": time.perf_counter() - t0}
    return man, lines, failures


def _report_dict(report) -> dict:
    return {"trials": report.trials, **{k: getattr(report, k) for k in ("violations", "max_slack", "max_abs_diff")
                                        if hasattr(report, k)}}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "synth":
            man = cmd_synth(cfg)
        elif args.command == "pretrain":
            man = cmd_pretrain(cfg, args.data)
        elif args.command == "train":
            man = cmd_train(cfg, args)
        elif args.command == "eval":
            man = cmd_eval(cfg, args)
        elif args.command == "sweep":
            man = cmd_sweep(cfg, args)
        else:
            man, lines, failures = cmd_check(cfg, args)
            print("\n".join(lines))
            if args.out is not None or args.config is not None:
                man.write(_out_dir(cfg) / "manifest.json")
            return 1 if failures else 0
        man.write(Path(cfg.out) / "manifest.json")
        print(json.dumps({"command": args.command, "out": cfg.out, "results": man.results}, sort_keys=True))
        return 0
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PUContrastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
