import os
import sys

import numpy as np
import pytest

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
sys.path.append(BASE_DIR)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_spd(rng, p):
    B = rng.standard_normal((p, p))
    return B.T @ B + np.eye(p)


def random_primal_data(rng, max_p=10, max_m=6, feasible=False):
    """C = B^T B + I with standard-normal B, w, A, b; feasible=True shifts b so Az <= b has an interior."""
    p = int(rng.integers(1, max_p + 1))
    m = int(rng.integers(0, max_m + 1))
    A = rng.standard_normal((m, p))
    if feasible:
        b = A @ rng.standard_normal(p) + np.abs(rng.standard_normal(m))
    else:
        b = rng.standard_normal(m)
    return random_spd(rng, p), rng.standard_normal(p), A, b


def random_gem_instance(rng, p_range=(2, 20), t_range=(1, 6)):
    p = int(rng.integers(p_range[0], p_range[1] + 1))
    t_minus_1 = int(rng.integers(t_range[0], t_range[1] + 1))
    return rng.standard_normal(p), [rng.standard_normal(p) for _ in range(t_minus_1)]
