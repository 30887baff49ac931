import numpy as np
import pytest

from ctdf.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_tensor(rng, shape, dtype=np.float64):
    return Tensor(rng.standard_normal(shape).astype(dtype))
