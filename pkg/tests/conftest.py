import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_orthogonal(rng, d):
    U, _, Vt = np.linalg.svd(rng.standard_normal((d, d)))
    return U @ Vt


def random_histogram(rng, n):
    w = rng.uniform(0.1, 1.0, n)
    return w / w.sum()


# acceptance results, printed together at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
