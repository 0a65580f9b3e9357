import os

# Single CPU box: OpenBLAS thread spawning loses 2-3x wall time to contention
# on small matmuls.  Must be set before numpy first loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
