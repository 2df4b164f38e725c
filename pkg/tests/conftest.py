import numpy as np
import pytest

from kmfl import StateBox, make_kernel
from kmfl.systems import MODEL_ZOO


@pytest.fixture(scope="session")
def unit_box():
    return StateBox.unit(1)


@pytest.fixture(scope="session")
def k05(unit_box):
    return make_kernel("gaussian", unit_box, bandwidth=0.5)


@pytest.fixture(scope="session")
def k1(unit_box):
    return make_kernel("gaussian", unit_box, bandwidth=1.0)


@pytest.fixture(scope="session")
def consensus(k05):
    return MODEL_ZOO["linear_consensus"](k05, h=0.5, u_max=0.1)


@pytest.fixture(scope="session")
def zoo(k05):
    cs_box = StateBox((0.0, -1.0), (1.0, 1.0))
    return {
        "linear_consensus": MODEL_ZOO["linear_consensus"](k05),
        "bounded_confidence": MODEL_ZOO["bounded_confidence"](k05),
        "cucker_smale_discrete": MODEL_ZOO["cucker_smale_discrete"](make_kernel("gaussian", cs_box, bandwidth=0.5)),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import summary_lines
    except ImportError:
        return
    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
