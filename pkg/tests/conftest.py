from pathlib import Path

import numpy as np
import pytest

from ctow.data import Dataset

DATA_DIR = Path(__file__).parent / "data"

# filled by test_acceptance.py, reported at the end of the session
ACCEPTANCE_RESULTS = {}


def two_blobs(n=100, seed=0, gap=3.0, d=2):
    """Balanced isotropic Gaussian blobs at +/- gap along the first axis."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, d))
    X[:, 0] += np.where(y == 1, gap, -gap)
    return X, y


@pytest.fixture
def blobs():
    X, y = two_blobs()
    return Dataset(X, y, 2)


@pytest.fixture(scope="session")
def wdbc_path():
    return DATA_DIR / "wdbc.csv"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
