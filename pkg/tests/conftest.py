import numpy as np
import pytest
from hypothesis import settings

from bachelier.model import constant_model

settings.register_profile("default", deadline=None, max_examples=60, print_blob=True)
settings.load_profile("default")

# standard test model: A0 = K = 100, r = 2, v = 10, T = 1
A0, K, R, V, T = 100.0, 100.0, 2.0, 10.0, 1.0


@pytest.fixture
def std_model():
    return constant_model(rho=R, vol=V, rate=R, A0=A0)


@pytest.fixture
def zero_rate_model():
    return constant_model(rho=0.0, vol=V, rate=0.0, A0=A0)


def within(value, target, stderr, k=3.0):
    """True when ``|value - target| <= k stderr``."""
    return abs(value - target) <= k * stderr


def sample_se(x):
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1)) / np.sqrt(x.size)
