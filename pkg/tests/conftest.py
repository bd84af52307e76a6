import numpy as np
import pytest

from clipflow.datasets import DatasetSpec, generate
from clipflow.net import Batch, Network

# (criterion number, PASS/FAIL, message), filled by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, msg in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{status} criterion {num:2d}: {msg}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_regression():
    train, _ = generate(DatasetSpec("synthetic_regression", n=12, dim=3, seed=5, split=1.0))
    return train


@pytest.fixture
def small_classification():
    train, test = generate(DatasetSpec("gaussian_blobs", n=40, dim=3, classes=3, seed=2, split=0.75))
    return train, test


def random_net(gen, sizes, acts=None):
    acts = acts or ["tanh"] * (len(sizes) - 2) + ["identity"]
    return Network.init(sizes, acts, seed=int(gen.integers(1 << 30)))


def random_batch(gen, n, d, out=1, classification=False):
    x = gen.normal(size=(n, d))
    if classification:
        y = np.eye(out)[gen.integers(out, size=n)]
    else:
        y = gen.normal(size=(n, out))
    return Batch(x, y, classification)
