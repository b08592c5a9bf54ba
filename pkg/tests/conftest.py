import numpy as np
import pytest

from gfslab import Grid, ModelParams, build_hamiltonian


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid1d():
    """Single site, 129-point field axis on [-8, 8]."""
    return Grid(1, 1.0, 129, 8.0)


@pytest.fixture
def grid2d():
    """Two sites, 16-point field axes on [-5, 5]."""
    return Grid(2, 1.0, 16, 5.0)


@pytest.fixture
def harmonic(grid1d):
    params = ModelParams(mass_m=1.0)
    return params, build_hamiltonian(params, grid1d)
