import numpy as np
import pytest

from kleinwave.minimizer import SolveOptions
from kleinwave.potential import Potential


@pytest.fixture
def pot():
    return Potential()


@pytest.fixture
def linear_pot():
    return Potential(a=0.0, b=0.0)


@pytest.fixture
def opts():
    return SolveOptions()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
