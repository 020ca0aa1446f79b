import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def torus8():
    from mfield.mesh import torus_lattice

    return torus_lattice(8, 8)


def delta(n, *idx, values=None):
    """Distribution with the given entries (1 by default)."""
    v = np.zeros(n)
    vals = np.ones(len(idx)) if values is None else values
    for i, x in zip(idx, vals):
        v[i] += x
    return v
