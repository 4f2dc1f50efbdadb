"""Epoch loop for ST / SAT / RAT runs with per-epoch CSV metrics and checkpoints."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config, stream, stream_seed
from .data import Dataset, SyntheticSpec, batches, gen_synthetic, load_idx, split
from .engine import MlpModel, SgdState, init_mlp, save_checkpoint
from .evaluation import clean_accuracy, robust_accuracy
from .regional import rat_train_step, sat_train_step, st_train_step

log = logging.getLogger(__name__)

METRICS_HEADER = [
    "epoch", "step", "method", "loss", "clean_acc", "robust_acc_pgd",
    "pgd_fail_frac", "mean_s", "mean_beta", "lr", "wall_ms",
]


@dataclass
class TrainResult:
    model: MlpModel
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    data_seed = stream_seed(cfg.seed, "data")
    if ds.kind == "idx":
        train = load_idx(ds.train_images, ds.train_labels, cfg.model.num_classes, "idx-train")
        test = load_idx(ds.test_images, ds.test_labels, cfg.model.num_classes, "idx-test")
        rng = np.random.default_rng(data_seed)
        if 0 < ds.max_train < len(train):
            train = train.subset(np.sort(rng.permutation(len(train))[:ds.max_train]))
        if 0 < ds.max_test < len(test):
            test = test.subset(np.sort(rng.permutation(len(test))[:ds.max_test]))
    else:
        spec = SyntheticSpec(ds.kind, ds.n_samples, ds.noise_std, ds.n_classes, data_seed)
        train, test = split(gen_synthetic(spec), ds.test_fraction, data_seed + 1)
    if len(train) == 0 or len(test) == 0:
        raise ValueError("empty train or test set")
    return train, test


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def train(cfg: ExperimentConfig, out_dir=None, train_set=None, test_set=None) -> TrainResult:
    """Run ``cfg.optimizer.epochs`` epochs of the configured method.

    With ``out_dir`` set, writes ``config.ini``, ``metrics.csv``, ``timing.csv``,
    ``final.ckpt`` (refreshed every epoch) and ``best.ckpt`` (best monitored
    PGD accuracy). A non-finite loss raises ``FloatingPointError`` and leaves
    the last good ``final.ckpt`` in place.
    """
    if train_set is None or test_set is None:
        train_set, test_set = load_datasets(cfg)
    if cfg.model.num_classes != train_set.num_classes:
        raise ValueError(
            f"model.num_classes = {cfg.model.num_classes} but dataset has {train_set.num_classes}"
        )
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(dump_config(cfg))

    widths = [train_set.dim, *cfg.model.hidden, cfg.model.num_classes]
    model = init_mlp(widths, stream(cfg.seed, "init"))
    opt = cfg.optimizer
    state = SgdState.for_model(model, opt.lr, opt.momentum, opt.weight_decay)
    attack_rng = stream(cfg.seed, "attack")
    sample_rng = stream(cfg.seed, "sample")
    shuffle_seed = stream_seed(cfg.seed, "shuffle")
    eval_seed = stream_seed(cfg.seed, "eval")
    monitor = test_set
    if 0 < cfg.eval.monitor_samples < len(test_set):
        pick = np.random.default_rng(stream_seed(cfg.seed, "data")).permutation(len(test_set))
        monitor = test_set.subset(np.sort(pick[:cfg.eval.monitor_samples]))
    eval_attack = replace(cfg.attack, iterations=cfg.eval.pgd_iterations)

    result = TrainResult(model)
    best = -1.0
    step = 0
    metrics_file = timing_file = None
    if out is not None:
        metrics_file = open(out / "metrics.csv", "w", newline="")
        timing_file = open(out / "timing.csv", "w", newline="")
        metrics_csv = csv.writer(metrics_file, lineterminator="\n")
        timing_csv = csv.writer(timing_file, lineterminator="\n")
        metrics_csv.writerow(METRICS_HEADER)
        timing_csv.writerow(["epoch", "train_ms", "eval_ms"])
    try:
        for epoch in range(opt.epochs):
            state.learning_rate = cfg.lr_at(epoch)
            t0 = time.perf_counter()
            sums = np.zeros(4)  # loss, fail, s, beta (weighted by batch size)
            seen = 0
            for x, y in batches(train_set, opt.batch_size, shuffle_seed, epoch):
                if cfg.method == "st":
                    m = st_train_step(model, x, y, state)
                elif cfg.method == "sat":
                    m = sat_train_step(model, x, y, cfg.attack, state, attack_rng)
                else:
                    m = rat_train_step(model, x, y, cfg.attack, cfg.rat, state, attack_rng, sample_rng)
                if not np.isfinite(m.loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
                sums += len(y) * np.array([m.loss, m.pgd_fail_frac, m.mean_s, m.mean_beta])
                seen += len(y)
                step += 1
            t1 = time.perf_counter()
            clean = clean_accuracy(model, monitor)
            robust = robust_accuracy(model, monitor, "pgd", eval_attack, eval_seed)
            t2 = time.perf_counter()
            wall_ms = int(round(1000 * (t1 - t0))) if cfg.record_wall_time else 0
            loss, fail, mean_s, mean_beta = (sums / seen).tolist()
            row = {
                "epoch": epoch + 1, "step": step, "method": cfg.method, "loss": loss,
                "clean_acc": clean, "robust_acc_pgd": robust, "pgd_fail_frac": fail,
                "mean_s": mean_s, "mean_beta": mean_beta, "lr": state.learning_rate,
                "wall_ms": wall_ms,
            }
            result.rows.append(row)
            log.info("epoch %d loss %.4f clean %.4f pgd %.4f", epoch + 1, loss, clean, robust)
            if out is not None:
                metrics_csv.writerow([_fmt(row[k]) for k in METRICS_HEADER])
                metrics_file.flush()
                timing_csv.writerow([epoch + 1, f"{1000 * (t1 - t0):.1f}", f"{1000 * (t2 - t1):.1f}"])
                save_checkpoint(model, out / "final.ckpt")
            if robust > best:
                best = robust
                result.best_epoch = epoch + 1
                if out is not None:
                    save_checkpoint(model, out / "best.ckpt")
    finally:
        if metrics_file is not None:
            metrics_file.close()
            timing_file.close()
    return result
