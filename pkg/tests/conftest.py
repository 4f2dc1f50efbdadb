from pathlib import Path

import numpy as np
import pytest

from rat.data import export_mnist_subset
from rat.engine import init_mlp

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
MNIST_DIR = ROOT / "data" / "mnist"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model(rng):
    return init_mlp([4, 16, 16, 3], rng)


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "t10k-labels-idx1-ubyte").exists():
        export_mnist_subset(MNIST_DIR)
    return MNIST_DIR


def random_unit_inputs(rng, n, d, dtype=np.float32):
    """Inputs in [0, 1] with a share of coordinates pinned at the box faces."""
    x = rng.random((n, d))
    x[rng.random((n, d)) < 0.1] = 0.0
    x[rng.random((n, d)) < 0.1] = 1.0
    return x.astype(dtype)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(label: str, passed: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}".rstrip())
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
