import csv

import numpy as np
import pytest

from rat.cli import EVAL_HEADER, GAPS_HEADER, PROBE_HEADER, SWEEP_HEADER, main
from rat.config import ConfigError, dump_config, parse_config, parse_config_text, parse_scales
from rat.train import METRICS_HEADER

from conftest import CONFIGS

SMALL = """
[experiment]
seed = 5
method = {method}

[dataset]
kind = two_moons
n_samples = 120
noise_std = 0.1

[model]
hidden = 8
num_classes = 2

[optimizer]
lr = 0.1
epochs = 2
batch_size = 32

[attack]
epsilon = 0.1
alpha = 0.025
iterations = 3
{extra}
"""

RAT = """
[rat]
scales = 0.0:2.0:0.1
samples = 2
beta_max = 1.0
beta_min = 0.5
"""


def small(method="rat", extra=None):
    return SMALL.format(method=method, extra=RAT if extra is None else extra)


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def header(path):
    with open(path) as f:
        return next(csv.reader(f))


def test_scale_grid_is_inclusive():
    s = parse_scales("0.0:2.0:0.1")
    assert len(s) == 21 and s[0] == 0.0 and s[-1] == 2.0
    assert parse_scales("0.5, 1, 2") == (0.5, 1.0, 2.0)


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.ini")):
        cfg = parse_config(path)
        assert cfg.method in path.stem


def test_sat_without_rat_section_is_valid():
    cfg = parse_config_text(small("sat", extra=""))
    assert cfg.rat is None


def test_rat_requires_rat_section():
    with pytest.raises(ConfigError, match=r"\[rat\]"):
        parse_config_text(small("rat", extra=""))


def test_beta_order_error_names_both_fields():
    text = small(extra=RAT.replace("beta_min = 0.5", "beta_min = 1.5"))
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert "beta_min" in str(exc.value) and "beta_max" in str(exc.value)


def test_unknown_and_missing_keys_are_collected():
    text = small().replace("noise_std = 0.1", "noise_std = 0.1\ncolour = red").replace("lr = 0.1\n", "")
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert len(exc.value.errors) >= 2
    msg = str(exc.value)
    assert "dataset.colour" in msg and "optimizer.lr" in msg


def test_seed_override_and_round_trip():
    cfg = parse_config_text(small(), seed_override=77)
    assert cfg.seed == 77
    again = parse_config_text(dump_config(cfg))
    assert again == cfg


def test_lr_schedule():
    cfg = parse_config_text(small().replace("epochs = 2", "epochs = 8"))
    assert cfg.decay_epochs == [4, 6]
    assert [round(cfg.lr_at(e), 8) for e in (0, 3, 4, 6, 7)] == [0.1, 0.1, 0.01, 0.001, 0.001]


def test_cli_train_eval_sweep_probe_gaps(tmp_path):
    cfg = write(tmp_path, small())
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert header(out / "metrics.csv") == METRICS_HEADER
    assert (out / "final.ckpt").exists() and (out / "best.ckpt").exists()
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
    assert header(out / "eval.csv") == EVAL_HEADER
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--axis", "iterations",
                 "--values", "1,2,4"]) == 0
    assert header(out / "sweep_iterations.csv") == SWEEP_HEADER
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--axis", "epsilon",
                 "--values", "0,0.1"]) == 0
    assert main(["probe", "--config", str(cfg), "--out", str(out), "--sample-index", "3"]) == 0
    rows = list(csv.reader(open(out / "probe_3.csv")))
    assert rows[0] == PROBE_HEADER and len(rows) == 22
    assert main(["gaps", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    assert header(out / "gaps.csv") == GAPS_HEADER


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, small().replace("epochs = 2", "epochs = 0"), "bad.ini")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "optimizer.epochs" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2
    good = write(tmp_path, small())
    # no checkpoint yet
    assert main(["eval", "--config", str(good), "--out", str(tmp_path / "none")]) == 3
    assert main(["train", "--config", str(good), "--out", str(tmp_path / "r")]) == 0
    assert main(["probe", "--config", str(good), "--out", str(tmp_path / "r"),
                 "--sample-index", "9999"]) == 3


def test_cli_rejects_empty_dataset(tmp_path, capsys):
    from rat.data import write_idx

    write_idx(np.zeros((0, 2, 2)), np.zeros(0), tmp_path / "ti", tmp_path / "tl")
    write_idx(np.zeros((3, 2, 2)), np.zeros(3), tmp_path / "vi", tmp_path / "vl")
    text = small("st", extra="").replace(
        "kind = two_moons\nn_samples = 120\nnoise_std = 0.1",
        "kind = idx\ntrain_images = ti\ntrain_labels = tl\ntest_images = vi\ntest_labels = vl",
    )
    cfg = write(tmp_path, text)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "empty" in capsys.readouterr().err


def test_repeated_training_is_byte_identical(tmp_path):
    cfg = write(tmp_path, small())
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.csv", "final.ckpt", "best.ckpt", "config.ini"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
    assert (tmp_path / "a" / "final.ckpt").read_bytes() != (tmp_path / "c" / "final.ckpt").read_bytes()
