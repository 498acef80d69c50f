import numpy as np
import pytest

from privlogit.data import split_agencies, synthetic


def make_agencies(n, p, k, seed=0, beta_scale=1.5):
    x, y, _ = synthetic(n, p, seed=seed, beta_scale=beta_scale)
    return x, y, split_agencies(x, y, k)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
