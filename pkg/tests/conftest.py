import math

import pytest

from maglorentz.geometry import MagneticConfig, ParticleState
from maglorentz.rng import Stream, derive_seed


@pytest.fixture
def cfg1():
    return MagneticConfig(1.0)


@pytest.fixture
def cfg4():
    return MagneticConfig(4.0)


@pytest.fixture
def start_state():
    return ParticleState((0.0, 0.0), (1.0, 0.0))


def make_stream(*tags) -> Stream:
    return Stream(derive_seed(20260810, *tags))


def random_incoming_pair(rng: Stream):
    """Random unit (n, v) with v.n <= 0 (strictly incoming)."""
    ang = rng.uniform_in(0.0, math.tau)
    n = (math.cos(ang), math.sin(ang))
    psi = rng.uniform_in(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6)
    c, s = math.cos(ang + math.pi + psi), math.sin(ang + math.pi + psi)
    return n, (c, s)
