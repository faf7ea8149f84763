import numpy as np
import pytest

from fmm.sim import SimConfig, simulate


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end experiment")


@pytest.fixture(scope="session")
def small_sim():
    """A 100-point stationary G-kernel track, cheap enough for pipeline tests."""
    return simulate(SimConfig(n_obs=100, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
