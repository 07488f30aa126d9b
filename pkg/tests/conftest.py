import sys
import numpy as np
import pytest
from hypothesis import settings

from ctp import VolumeDistribution

# first calls pay for numba compilation
settings.register_profile("ctp", deadline=None, max_examples=60)
settings.load_profile("ctp")


@pytest.fixture
def dirac1():
    return VolumeDistribution.dirac(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for name, mod in list(sys.modules.items()):
        if name.split(".")[-1] == "test_acceptance":
            lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
