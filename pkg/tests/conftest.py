import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def within_sigmas(estimate, target, sigma, k=3.0):
    return abs(estimate - target) <= k * sigma
