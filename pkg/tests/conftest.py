import numpy as np
import pytest

from powerres.core import RngStream, tune_allocator

tune_allocator()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running benchmark reproduction (minutes)")


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(99)
