import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from schedsgd.problems import make_quadratic, quadratic

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


@pytest.fixture
def toy4():
    """n=4, d=1 quadratic with centers -1, 0, 1, 2."""
    return quadratic(np.array([-1.0, 0.0, 1.0, 2.0]), lam=1.0)


@pytest.fixture(scope="session")
def quad64():
    return make_quadratic(64, 10, seed=0)


@pytest.fixture
def config_path():
    return lambda name: os.path.join(CONFIGS, name)
