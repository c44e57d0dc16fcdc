import os

import numpy as np
import pytest

from fedarena import data

MNIST_DIR = os.environ.get("FEDARENA_DATA_DIR", "/root/data/mnist")


def mnist_available():
    return all(
        os.path.exists(os.path.join(MNIST_DIR, name)) or os.path.exists(os.path.join(MNIST_DIR, name + ".gz"))
        for name in data.MNIST_FILES.values()
    )


@pytest.fixture(scope="session")
def mnist_dir():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set FEDARENA_DATA_DIR)")
    return MNIST_DIR


@pytest.fixture(scope="session")
def blobs():
    return data.synth_classification(4, 6, 1000, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_mnist_dir(tmp_path):
    """A fake MNIST directory: 30 train and 10 test images of 2x3 pixels."""
    r = np.random.default_rng(0)
    for split, n in (("train", 30), ("t10k", 10)):
        data.write_idx(tmp_path / f"{split}-images-idx3-ubyte", r.integers(0, 256, size=(n, 2, 3)))
        data.write_idx(tmp_path / f"{split}-labels-idx1-ubyte", np.arange(n) % 10)
    return tmp_path


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append((number, f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
