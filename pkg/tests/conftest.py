import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qmaxwell.geometry import BoxDomain
from qmaxwell.materials import ConstantIsotropic, Impedance, MaterialLaw, ScalarKerr
from qmaxwell.sbp import SbpOperators

settings.register_profile(
    "qmxw", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("qmxw")


@pytest.fixture
def unit_box8():
    return BoxDomain(cells=(8, 8, 8))


@pytest.fixture
def ops8(unit_box8):
    return SbpOperators(unit_box8)


@pytest.fixture
def linear_law():
    return MaterialLaw(ConstantIsotropic(), ConstantIsotropic(), "linear")


@pytest.fixture
def kerr_law():
    return MaterialLaw(ScalarKerr(), ScalarKerr(), "kerr")


@pytest.fixture
def unit_impedance():
    return Impedance()


def random_field(shape, seed=0):
    return np.random.default_rng(seed).standard_normal((3, *shape))


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    """Collects one summary line per acceptance criterion."""
    return pytestconfig.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("ab:"))):
            terminalreporter.write_line(line)
