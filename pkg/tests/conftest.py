import numpy as np
import pytest

from h2sim.verify import random_fixture


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def integer_fixture(rng):
    return random_fixture(rng, integer=True)
