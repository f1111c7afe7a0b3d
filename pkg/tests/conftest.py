import numpy as np
import pytest
from threadpoolctl import threadpool_limits

# determinism tests assume a single BLAS thread
_limits = threadpool_limits(limits=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
