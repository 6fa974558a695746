import numpy as np
import pytest

from mamp.operators import build_operator, compute_spectral_table
from mamp.prior import BernoulliGaussianPrior


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bg():
    return BernoulliGaussianPrior(0.1)


@pytest.fixture(scope="session")
def kappa10_table():
    op = build_operator(4096, 8192, 10.0, 0)
    return compute_spectral_table(op, 60)


def cn(rng, size, var=1.0):
    return np.sqrt(var / 2) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
