import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from npcharm.grid import build_grid
from npcharm.solver import SolverConfig, solve_dirichlet, tripod_arc_boundary
from npcharm.targets import tripod

settings.register_profile(
    "npcharm", deadline=None, max_examples=50, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("npcharm")


def disk(N, radius=1.0):
    return build_grid({"kind": "ball", "radius": radius}, N, 2.0 * radius / (N - 1))


def square(N, half=1.0):
    """[-half, half]^2 with N vertices per side."""
    return build_grid({"kind": "cube", "side": 2.0 * half, "lower": [-half, -half]}, N, 2.0 * half / (N - 1))


@pytest.fixture(scope="session")
def tripod_minimizer():
    """Dirichlet minimizer on the 129 disk with the three-arc tripod data."""
    T = tripod()
    g = disk(129)
    return solve_dirichlet(g, T, tripod_arc_boundary(T, g), SolverConfig(multilevel=True))


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
