"""
Shared fixtures.
"""

import numpy as np
import pytest

from oarseg.data.synth import synth_generate
from oarseg.tensor.tensor import precision


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Run tests marked slow")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: training runs, scaling timings and paper-scale models")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def float64():
    """Run the test body with the engine in 64-bit mode."""
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def phantoms():
    """Four small pelvis phantoms with two classes."""
    return synth_generate(4, 2, extent=(4, 32, 32), seed=3)
