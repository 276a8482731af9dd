import numpy as np
import pytest

from delayfdtd.domain import BoxDomain, build_grid
from delayfdtd.materials import constant_isotropic
from delayfdtd.operators import build_operators


@pytest.fixture(scope="session")
def unit_grid8():
    return build_grid(BoxDomain((1.0, 1.0, 1.0), (8, 8, 8), (0.5, 0.5, 0.5)))


@pytest.fixture(scope="session")
def ops8(unit_grid8):
    eps = constant_isotropic(unit_grid8, 1.0)
    mu = constant_isotropic(unit_grid8, 1.0)
    return build_operators(unit_grid8, eps, mu)


@pytest.fixture(scope="session")
def unit_grid6():
    return build_grid(BoxDomain((1.0, 1.0, 1.0), (6, 5, 4), (0.5, 0.5, 0.5)))


@pytest.fixture(scope="session")
def ops6(unit_grid6):
    eps = constant_isotropic(unit_grid6, 1.0)
    mu = constant_isotropic(unit_grid6, 1.0)
    return build_operators(unit_grid6, eps, mu)


def random_tangential(ops, rng, shape=()):
    """Random tangential field at the boundary samples."""
    s = ops.grid.samples
    raw = rng.standard_normal(shape + (s.count, 3))
    nu = np.broadcast_to(s.normals, raw.shape)
    return raw - np.einsum("...i,...i->...", raw, nu)[..., None] * nu
