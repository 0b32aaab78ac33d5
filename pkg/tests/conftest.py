from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from faithbench import featviz, harness
from faithbench.data import load_idx
from faithbench.models import LinearModel, train_sgd

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data" / "mnist5k"
IDX = {
    "train_images": str(DATA / "train-images-idx3-ubyte.gz"),
    "train_labels": str(DATA / "train-labels-idx1-ubyte.gz"),
    "test_images": str(DATA / "t10k-images-idx3-ubyte.gz"),
    "test_labels": str(DATA / "t10k-labels-idx1-ubyte.gz"),
}

W3 = np.array([3.0, -1.0, 2.0])
X3 = np.array([1.0, 2.0, 3.0])

_ACCEPTANCE: list[str] = []


@pytest.fixture
def linear3():
    return LinearModel(W3, 0.0)


@dataclass
class Desk:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    model: object
    train_accuracy: float


@pytest.fixture(scope="session")
def desk():
    train_x = load_idx(IDX["train_images"])
    train_y = load_idx(IDX["train_labels"])
    result = train_sgd([784, 128, 10], train_x, train_y)
    return Desk(train_x, train_y, load_idx(IDX["test_images"]), load_idx(IDX["test_labels"]), result.model, result.accuracy)


@pytest.fixture(scope="session")
def desk_featviz(desk):
    r = featviz.mean_magnitude_spectrum(desk.train_x)
    return featviz.optimize_baseline(desk.model, r)


@pytest.fixture(scope="session")
def desk_grid(desk, desk_featviz):
    """The full 200 x 6 x 12 grid on the desk model (a few minutes)."""
    cfg = harness.RunConfig(**IDX, image_count=200, seed=0)
    data = (desk.train_x, desk.train_y, desk.test_x, desk.test_y)
    return harness.run_benchmark(cfg, model=desk.model, featviz_image=desk_featviz.image, data=data)


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number, ok, detail):
        _ACCEPTANCE.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
