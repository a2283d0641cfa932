import numpy as np
import pytest

from asvsim.dynamics import DEFAULT_GEOMETRY, DEFAULT_PARAMS


@pytest.fixture
def params():
    return DEFAULT_PARAMS


@pytest.fixture
def geom():
    return DEFAULT_GEOMETRY


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
