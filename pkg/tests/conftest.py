import numpy as np
import pytest

from vbident.ensemble import make_ensemble


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_ac():
    return make_ensemble("ac", 8, seed=3)
