import numpy as np
import pytest
import threadpoolctl

# Single-threaded BLAS keeps every numeric test bit-reproducible.
threadpoolctl.threadpool_limits(limits=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
