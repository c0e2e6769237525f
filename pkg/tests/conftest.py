import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("netcca", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("netcca")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dense_reg_cov(x, ridge=None):
    """Dense ``X^T X / (n - 1) + sqrt(log p / n) I`` (test oracle)."""
    n, p = x.shape
    r = np.sqrt(np.log(p) / n) if ridge is None else ridge
    return x.T @ x / (n - 1) + r * np.eye(p)


def dense_power(a, power):
    lam, vec = np.linalg.eigh(a)
    return (vec * lam**power) @ vec.T


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def report():
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
