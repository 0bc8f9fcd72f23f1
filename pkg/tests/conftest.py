import numpy as np
import pytest

from smoothquant.graph import make_synthetic_model, synthetic_inputs
from smoothquant.tensor import OutlierSpec

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def outlier_model():
    return make_synthetic_model(0, outlier=OutlierSpec(0.01, 100.0, 0))


@pytest.fixture(scope="session")
def calib_samples():
    return synthetic_inputs(0, 32, 32, 128)


@pytest.fixture(scope="session")
def eval_samples():
    return synthetic_inputs(1000, 4, 32, 128)
