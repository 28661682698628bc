import os

import pytest

from bnspde import config
from bnspde.settings import default_settings, override

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "config")


@pytest.fixture(autouse=True)
def quiet():
    verbose, progress = config.verbose, config.progress
    config.verbose = False
    config.progress = False
    yield
    config.verbose, config.progress = verbose, progress


def make_settings(values=None, **kwargs):
    """Validated default settings with dotted-path overrides."""
    return override(default_settings, values, **kwargs)


@pytest.fixture
def settings():
    return make_settings()


@pytest.fixture
def deterministic_settings():
    return make_settings({"grid.n": 32, "lattice.T": 0.5, "lattice.M": 64, "initial.name": "cos_mode"})


@pytest.fixture
def boundary_noise_settings():
    return make_settings({"grid.n": 16, "lattice.T": 0.25, "lattice.M": 32,
                          "noise.boundary.kind": "spectral", "noise.boundary.spectrum": "single",
                          "nonlinearities.C": {"name": "constant", "params": [1.0]}})
