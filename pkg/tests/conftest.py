import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dislocore.potentials import ThreeBodyPotential, TwoBodyPotential

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by tests/test_acceptance.py, reported at the end of the run
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def sw():
    return ThreeBodyPotential()


@pytest.fixture(scope="session")
def morse():
    return TwoBodyPotential()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
