"""Experiment configuration: INI file <-> validated dataclasses, plus seed streams.

See README.md for the full key reference. Every key is checked: unknown keys
and sections are rejected, and all problems are reported together.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .regional import RatConfig

METHODS = ("st", "sat", "rat")
DATASET_KINDS = ("two_moons", "gaussian_blobs", "idx")

# Independent random streams derived from the master seed. Adding a consumer
# must not shift the draws of any other.
STREAMS = {"init": 0, "shuffle": 1, "attack": 2, "sample": 3, "eval": 4, "data": 5}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator for one named consumer of the master seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.Philox(ss))


def stream_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(2**63))


@dataclass
class DatasetSection:
    kind: str
    n_samples: int = 1000
    noise_std: float = 0.1
    n_classes: int = 2
    test_fraction: float = 0.25
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    max_train: int = 0  # 0 = use everything
    max_test: int = 0


@dataclass
class ModelSection:
    hidden: list[int]
    num_classes: int


@dataclass
class OptimizerSection:
    lr: float
    epochs: int
    batch_size: int
    momentum: float = 0.9
    weight_decay: float = 2e-4
    lr_decay_epochs: list[int] | None = None  # None = half and three quarters of epochs


@dataclass
class EvalSection:
    pgd_iterations: int = 20
    monitor_samples: int = 0  # test points scored each epoch; 0 = whole test set


@dataclass
class ExperimentConfig:
    seed: int
    method: str
    dataset: DatasetSection
    model: ModelSection
    optimizer: OptimizerSection
    attack: AttackConfig
    rat: RatConfig | None = None
    eval: EvalSection = field(default_factory=EvalSection)
    record_wall_time: bool = False

    @property
    def decay_epochs(self) -> list[int]:
        if self.optimizer.lr_decay_epochs is not None:
            return list(self.optimizer.lr_decay_epochs)
        t = self.optimizer.epochs
        return sorted({e for e in (t // 2, (3 * t) // 4) if 0 < e < t})

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: divided by 10 at every decay epoch reached."""
        drops = sum(1 for e in self.decay_epochs if e <= epoch)
        return self.optimizer.lr * 0.1**drops


# section -> key -> (parser, required)
def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v):
    return [int(p) for p in v.replace(",", " ").split()]


def _str(v):
    return v.strip()


def parse_scales(v: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive grid) or an explicit comma-separated list."""
    v = v.strip()
    if ":" in v:
        start, stop, step = (float(p) for p in v.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        n = int(round((stop - start) / step)) + 1
        return tuple(round(start + i * step, 10) for i in range(n))
    return tuple(float(p) for p in v.replace(",", " ").split())


SCHEMA = {
    "experiment": {
        "seed": (_int, True),
        "method": (_str, True),
        "record_wall_time": (_bool, False),
    },
    "dataset": {
        "kind": (_str, True),
        "n_samples": (_int, False),
        "noise_std": (_float, False),
        "n_classes": (_int, False),
        "test_fraction": (_float, False),
        "train_images": (_str, False),
        "train_labels": (_str, False),
        "test_images": (_str, False),
        "test_labels": (_str, False),
        "max_train": (_int, False),
        "max_test": (_int, False),
    },
    "model": {
        "hidden": (_int_list, True),
        "num_classes": (_int, True),
    },
    "optimizer": {
        "lr": (_float, True),
        "epochs": (_int, True),
        "batch_size": (_int, True),
        "momentum": (_float, False),
        "weight_decay": (_float, False),
        "lr_decay_epochs": (_int_list, False),
    },
    "attack": {
        "epsilon": (_float, True),
        "alpha": (_float, True),
        "iterations": (_int, True),
        "random_start": (_bool, False),
    },
    "rat": {
        "scales": (parse_scales, True),
        "samples": (_int, True),
        "beta_max": (_float, True),
        "beta_min": (_float, True),
        "force_end_point": (_bool, False),
    },
    "eval": {
        "pgd_iterations": (_int, False),
        "monitor_samples": (_int, False),
    },
}
OPTIONAL_SECTIONS = {"rat", "eval"}


def parse_config_text(text: str, seed_override: int | None = None, base_dir=None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc

    errors: list[str] = []
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
    for section, keys in SCHEMA.items():
        values[section] = {}
        if not cp.has_section(section):
            if section not in OPTIONAL_SECTIONS:
                errors.append(f"missing section [{section}]")
            continue
        for key in cp[section]:
            if key not in keys:
                errors.append(f"unknown key {section}.{key}")
        for key, (conv, required) in keys.items():
            if key in cp[section]:
                try:
                    values[section][key] = conv(cp[section][key])
                except ValueError as exc:
                    errors.append(f"{section}.{key}: {exc}")
            elif required and not (section == "experiment" and key == "seed" and seed_override is not None):
                errors.append(f"missing required key {section}.{key}")
    if errors:
        raise ConfigError(errors)

    exp = values["experiment"]
    seed = seed_override if seed_override is not None else exp["seed"]
    method = exp.get("method", "")
    if not 0 <= seed < 2**64:
        errors.append("experiment.seed must be an unsigned 64-bit integer")
    if method not in METHODS:
        errors.append(f"experiment.method must be one of {METHODS}, got {method!r}")

    ds = DatasetSection(**values["dataset"])
    if ds.kind not in DATASET_KINDS:
        errors.append(f"dataset.kind must be one of {DATASET_KINDS}, got {ds.kind!r}")
    if ds.kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(ds, key):
                errors.append(f"missing required key dataset.{key} (kind = idx)")
            elif base_dir is not None and not Path(getattr(ds, key)).is_absolute():
                setattr(ds, key, str(Path(base_dir) / getattr(ds, key)))
    if ds.n_samples <= 0:
        errors.append("dataset.n_samples must be positive")
    if ds.noise_std < 0:
        errors.append("dataset.noise_std must be nonnegative")
    if not 0 < ds.test_fraction < 1:
        errors.append("dataset.test_fraction must lie in (0, 1)")

    model = ModelSection(**values["model"])
    if any(w <= 0 for w in model.hidden):
        errors.append("model.hidden widths must be positive")
    if model.num_classes < 2:
        errors.append("model.num_classes must be >= 2")
    if ds.kind == "two_moons" and model.num_classes != 2:
        errors.append("model.num_classes must be 2 for two_moons")
    if ds.kind == "gaussian_blobs" and model.num_classes != ds.n_classes:
        errors.append("model.num_classes must equal dataset.n_classes")

    opt = OptimizerSection(**values["optimizer"])
    if opt.lr <= 0:
        errors.append("optimizer.lr must be positive")
    if opt.epochs < 1:
        errors.append("optimizer.epochs must be >= 1")
    if opt.batch_size < 1:
        errors.append("optimizer.batch_size must be >= 1")
    if not 0 <= opt.momentum < 1:
        errors.append("optimizer.momentum must lie in [0, 1)")
    if opt.weight_decay < 0:
        errors.append("optimizer.weight_decay must be nonnegative")
    if opt.lr_decay_epochs is not None:
        d = opt.lr_decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])) or any(not 0 <= e < opt.epochs for e in d):
            errors.append("optimizer.lr_decay_epochs must be strictly increasing and < epochs")

    attack = None
    try:
        attack = AttackConfig(**values["attack"])
    except (TypeError, ValueError) as exc:
        errors.append(f"attack: {exc}")

    rat = None
    if values["rat"]:
        r = values["rat"]
        try:
            rat = RatConfig(
                scales=r["scales"],
                samples_per_point=r["samples"],
                beta_max=r["beta_max"],
                beta_min=r["beta_min"],
                force_end_point=r.get("force_end_point", False),
            )
        except KeyError:
            pass  # missing keys already reported
        except ValueError as exc:
            errors.append(f"rat: {exc}")
    elif method == "rat":
        errors.append("missing section [rat] (required when experiment.method = rat)")

    ev = EvalSection(**values["eval"])
    if ev.pgd_iterations < 1:
        errors.append("eval.pgd_iterations must be >= 1")
    if ev.monitor_samples < 0:
        errors.append("eval.monitor_samples must be >= 0")

    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(seed, method, ds, model, opt, attack, rat, ev,
                           exp.get("record_wall_time", False))
    opt.lr_decay_epochs = cfg.decay_epochs
    return cfg


def parse_config(path, seed_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config_text(text, seed_override, base_dir=path.parent)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Fully resolved INI text; parsing it back yields an equal config."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp["experiment"] = {
        "seed": _fmt(cfg.seed),
        "method": cfg.method,
        "record_wall_time": _fmt(cfg.record_wall_time),
    }
    ds = cfg.dataset
    cp["dataset"] = {k: _fmt(getattr(ds, k)) for k in SCHEMA["dataset"]}
    cp["model"] = {"hidden": _fmt(cfg.model.hidden), "num_classes": _fmt(cfg.model.num_classes)}
    opt = cfg.optimizer
    cp["optimizer"] = {
        "lr": _fmt(opt.lr),
        "epochs": _fmt(opt.epochs),
        "batch_size": _fmt(opt.batch_size),
        "momentum": _fmt(opt.momentum),
        "weight_decay": _fmt(opt.weight_decay),
        "lr_decay_epochs": _fmt(cfg.decay_epochs),
    }
    a = cfg.attack
    cp["attack"] = {
        "epsilon": _fmt(a.epsilon),
        "alpha": _fmt(a.alpha),
        "iterations": _fmt(a.iterations),
        "random_start": _fmt(a.random_start),
    }
    if cfg.rat is not None:
        r = cfg.rat
        cp["rat"] = {
            "scales": _fmt(list(r.scales)),
            "samples": _fmt(r.samples_per_point),
            "beta_max": _fmt(r.beta_max),
            "beta_min": _fmt(r.beta_min),
            "force_end_point": _fmt(r.force_end_point),
        }
    cp["eval"] = {
        "pgd_iterations": _fmt(cfg.eval.pgd_iterations),
        "monitor_samples": _fmt(cfg.eval.monitor_samples),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
