import numpy as np
import pytest
import torch

from csilab.netcore import RandomState


@pytest.fixture(autouse=True)
def _single_thread():
    # keep BLAS fan-out off the timing-sensitive tests on small boxes
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return RandomState(1234)


@pytest.fixture
def np_gen():
    return np.random.default_rng(99)
