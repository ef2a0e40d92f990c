import numpy as np
import pytest

from netsolve import SpatialNetwork, generate_fiber_network, grid_network


@pytest.fixture
def path3():
    """Three nodes on a line, two unit edges."""
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    edges = np.array([[0, 1], [1, 2]])
    return SpatialNetwork(coords, edges, domain=(2.0, 1.0))


@pytest.fixture
def pair2():
    """Two nodes joined by a single unit edge."""
    coords = np.array([[0.0, 0.0], [1.0, 0.0]])
    edges = np.array([[0, 1]])
    return SpatialNetwork(coords, edges, domain=(1.0, 1.0))


@pytest.fixture(scope="session")
def small_fiber_net():
    """One modest fiber network shared by the slower structural tests."""
    return generate_fiber_network(seed=42, kind="uniform",
                                  fiber_length=0.2, density=60.0)


@pytest.fixture(scope="session")
def grid16():
    return grid_network(16)
