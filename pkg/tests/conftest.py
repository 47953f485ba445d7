import numpy as np
import pytest

from simexcal import BiasDistribution, ErrorParameters, MeterClassSpec, observe, simulate_uut
from simexcal.study import generate_default_profile

TRUTH = ErrorParameters(0.2, 0.2, 5.0)
CAL_WINDOW = ("2016-02-02", "2016-02-03")


@pytest.fixture(scope="session")
def profile():
    return generate_default_profile()


@pytest.fixture(scope="session")
def cal_profile(profile):
    return profile.window(*CAL_WINDOW)


def reference_pair(cal_profile, seed, spec=MeterClassSpec(), bias=BiasDistribution()):
    """Calibration-window observations under the reference scenario."""
    rng = np.random.default_rng(seed)
    y = simulate_uut(cal_profile, TRUTH.alpha, TRUTH.phi_c, bias, rng)
    return observe(cal_profile, spec, y, rng)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
