import numpy as np
import pytest
from hypothesis import settings

from dprsa.data import SyntheticSpec, gen_synthetic

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_problem():
    """A quick 10-class synthetic train/test pair."""
    train = gen_synthetic(SyntheticSpec(10, 20, 30, 4.0, 1.0, seed=1))
    test = gen_synthetic(SyntheticSpec(10, 20, 30, 4.0, 1.0, seed=2))
    return train, test
