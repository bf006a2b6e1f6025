import numpy as np
import pytest

from polyfk.mesh import generate_voronoi
from polyfk.verify import MeshCache

_cache = MeshCache()


@pytest.fixture(scope="session")
def mesh_cache():
    return _cache


@pytest.fixture(scope="session")
def unit_voronoi_30():
    return _cache.voronoi(30, seed=42, lloyd_iters=100)


@pytest.fixture(scope="session")
def unit_voronoi_small():
    """A 10-element mesh, Dirichlet everywhere, for form/Jacobian tests."""
    return _cache.voronoi(10, seed=5, lloyd_iters=30)


@pytest.fixture(scope="session")
def neumann_voronoi_small():
    return _cache.voronoi(8, seed=2, lloyd_iters=20, boundary_tags="neumann")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
