"""Command line entry point: ``rat {train,eval,sweep,probe,gaps}``.

Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .attacks import pgd
from .config import ConfigError, ExperimentConfig, parse_config, parse_scales, stream, stream_seed
from .engine import CheckpointError, load_checkpoint
from .evaluation import evaluate, generalization_gaps, scale_probe, sweep_epsilon, sweep_iterations
from .train import load_datasets, train

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

EVAL_HEADER = ["attack", "epsilon", "iterations", "accuracy", "n"]
SWEEP_HEADER = ["axis", "value", "robust_acc"]
PROBE_HEADER = ["sample_index", "label", "lam", "s", "loss", "adversarial"]
GAPS_HEADER = ["standard_train", "standard_test", "standard_gap",
               "robust_train", "robust_test", "robust_gap"]

DEFAULT_PROBE_SCALES = "0.0:2.0:0.1"


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _f(v: float) -> str:
    return f"{v:.6f}"


def _load(args):
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.out) / "final.ckpt"
    model = load_checkpoint(ckpt)
    return model, load_datasets(args.cfg)


def cmd_train(args):
    train(args.cfg, args.out)
    return Path(args.out) / "metrics.csv"


def cmd_eval(args):
    cfg: ExperimentConfig = args.cfg
    model, (_, test) = _load(args)
    report = evaluate(model, test, cfg.attack, stream_seed(cfg.seed, "eval"), cfg.eval.pgd_iterations)
    a = cfg.attack
    rows = [
        ["clean", _f(0.0), 0, _f(report.clean_accuracy), report.n_evaluated],
        ["fgsm", _f(a.epsilon), 1, _f(report.robust_accuracy["fgsm"]), report.n_evaluated],
        ["pgd", _f(a.epsilon), cfg.eval.pgd_iterations, _f(report.robust_accuracy["pgd"]), report.n_evaluated],
        ["cw", _f(a.epsilon), cfg.eval.pgd_iterations, _f(report.robust_accuracy["cw"]), report.n_evaluated],
    ]
    return _write_csv(Path(args.out) / "eval.csv", EVAL_HEADER, rows)


def cmd_sweep(args):
    cfg: ExperimentConfig = args.cfg
    model, (_, test) = _load(args)
    seed = stream_seed(cfg.seed, "eval")
    a = cfg.attack
    if args.axis == "iterations":
        values = [int(v) for v in args.values.split(",")]
        res = sweep_iterations(model, test, a.epsilon, a.alpha, values, seed, a.random_start)
    else:
        values = [float(v) for v in args.values.split(",")]
        res = sweep_epsilon(model, test, values, a.alpha, a.iterations, seed, a.random_start)
    rows = [[res.axis, v if isinstance(v, int) else _f(v), _f(acc)] for v, acc in res.points]
    return _write_csv(Path(args.out) / f"sweep_{args.axis}.csv", SWEEP_HEADER, rows)


def cmd_probe(args):
    cfg: ExperimentConfig = args.cfg
    model, (_, test) = _load(args)
    i = args.sample_index
    if not 0 <= i < len(test):
        raise IndexError(f"sample index {i} outside test set of size {len(test)}")
    x, y = test.inputs[i:i + 1], test.labels[i:i + 1]
    path = pgd(model, x, y, cfg.attack, stream(cfg.seed, "eval"))
    if args.scales:
        scales = parse_scales(args.scales)
    elif cfg.rat is not None:
        scales = cfg.rat.scales
    else:
        scales = parse_scales(DEFAULT_PROBE_SCALES)
    probe = scale_probe(model, x[0], int(y[0]), path, scales, args.lam)
    rows = [[i, int(y[0]), _f(args.lam), _f(r.scale), _f(r.loss), int(r.adversarial)]
            for r in probe.records]
    return _write_csv(Path(args.out) / f"probe_{i}.csv", PROBE_HEADER, rows)


def cmd_gaps(args):
    cfg: ExperimentConfig = args.cfg
    model, (train_set, test) = _load(args)
    pgd_cfg = replace(cfg.attack, iterations=cfg.eval.pgd_iterations)
    g = generalization_gaps(model, train_set, test, pgd_cfg, stream_seed(cfg.seed, "eval"))
    return _write_csv(Path(args.out) / "gaps.csv", GAPS_HEADER, [[_f(g[k]) for k in GAPS_HEADER]])


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "probe": cmd_probe, "gaps": cmd_gaps}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI experiment config")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override experiment.seed (u64)")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    common.add_argument("-v", "--verbose", action="store_true")

    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", default=None, help="defaults to <out>/final.ckpt")

    parser = argparse.ArgumentParser(prog="rat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model")
    sub.add_parser("eval", parents=[common, ckpt], help="clean/FGSM/PGD/CW accuracy")
    p = sub.add_parser("sweep", parents=[common, ckpt], help="PGD iteration or budget sweep")
    p.add_argument("--axis", choices=["iterations", "epsilon"], required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p = sub.add_parser("probe", parents=[common, ckpt], help="loss along one region direction")
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--lam", type=float, default=0.5, help="segment position of the probed direction")
    p.add_argument("--scales", default=None, help="grid start:stop:step or list; defaults to rat.scales")
    sub.add_parser("gaps", parents=[common, ckpt], help="train/test generalization gaps")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.cfg = parse_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(args.threads):
            out = COMMANDS[args.command](args)
    except (OSError, ValueError, IndexError, FloatingPointError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
