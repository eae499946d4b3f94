import numpy as np
import pytest

from addinfer.simulate import SimConfig, gen_sim_data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sim200():
    """One null dataset from the four-covariate simulation model."""
    return gen_sim_data(SimConfig(n=200, theta=0.0, seed=7))


@pytest.fixture(scope="session")
def sim100():
    return gen_sim_data(SimConfig(n=100, theta=0.5, seed=3))


CRITERIA = {}


def record_criterion(number, passed, detail):
    """Store one acceptance outcome for the end-of-run summary."""
    CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
