import numpy as np
import pytest

from smoothfat.data import make_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blobs():
    return make_blobs(2, 40, 6, 0.8, seed=3, noise=0.2)
