import numpy as np
import pytest

from wickwaves.torus import TorusGrid


@pytest.fixture
def small_grid():
    return TorusGrid(1.0, 16, 2.0)


@pytest.fixture
def medium_grid():
    return TorusGrid(2.0, 32, 3.0)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)
