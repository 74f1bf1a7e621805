from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

E12 = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
Q_TEST = [[2.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rank_two(rng, n, scale=2.0, floor=0.2):
    """Random 3x2 matrices with ``|E^1 ^ E^2| >= floor``."""
    out = []
    while len(out) < n:
        E = rng.normal(scale=scale / 2, size=(3, 2))
        if np.linalg.norm(np.cross(E[:, 0], E[:, 1])) >= floor:
            out.append(E)
    return np.array(out)
