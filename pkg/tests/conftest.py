import numpy as np
import pytest

from nsrkit import field as F
from nsrkit import geometry as G
from nsrkit import jets as J
from nsrkit import params as P


@pytest.fixture(scope="session")
def dset():
    return G.build_direction_set()


@pytest.fixture(scope="session")
def profiles():
    return J.make_profiles()


@pytest.fixture(scope="session")
def desk():
    return P.ParameterConfig.from_mapping(P.PRESETS["desk"])


@pytest.fixture(scope="session")
def desk_schedule(desk):
    return P.schedule(desk, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def g16():
    return F.Grid(16)


@pytest.fixture(scope="session")
def g32():
    return F.Grid(32)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
