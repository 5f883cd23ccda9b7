import numpy as np
import pytest

from maecodec import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(20240807)


def tensor64(rng, shape, scale=1.0, requires_grad=True):
    return T.Tensor(scale * rng.normal(size=shape), requires_grad=requires_grad)


def inner(a, b):
    return float((np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)).sum())
