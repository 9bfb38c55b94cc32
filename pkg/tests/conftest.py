from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shiftlab.dist_core import Alphabet, new_conditional_joint
from shiftlab.fixtures import d0

settings.register_profile(
    "shiftlab",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("shiftlab")


@pytest.fixture
def D0():
    return d0()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def binary_joint(p_y1: list[float], p_y2: list[float], px=None):
    """Two-covariate binary joint with Y1 independent of Y2 given X."""
    alphabet = Alphabet((0, 1), (0, 1), (0, 1))
    table = []
    for a, b in zip(p_y1, p_y2):
        m1 = np.array([1 - a, a])
        m2 = np.array([1 - b, b])
        table.append(np.outer(m1, m2))
    return new_conditional_joint(alphabet, px or [0.5, 0.5], table)
