"""Shared fixtures: small grids and cached weight tables.

Everything here is deliberately small (n around 21) so the unit suite
stays fast; the acceptance tests build their own production-size objects.
"""
import numpy as np
import pytest

from lbkin import (
    make_grid, maxwellian, gaussian_spectrum,
    equilibrium_weight_tables, equilibrium_coefficients,
)
from lbkin.fieldio import DensityField


@pytest.fixture(scope="session")
def vgauss():
    return gaussian_spectrum(1.0, 1.0)


@pytest.fixture(scope="session")
def grid2():
    return make_grid(2, 6.0, 21)


@pytest.fixture(scope="session")
def grid3():
    return make_grid(3, 5.0, 11)


@pytest.fixture(scope="session")
def mu_field2(grid2):
    return DensityField(grid2, maxwellian(grid2), "absolute")


@pytest.fixture(scope="session")
def eqwt2(grid2, vgauss):
    return equilibrium_weight_tables(grid2, vgauss)


@pytest.fixture(scope="session")
def coef2(grid2, vgauss):
    return equilibrium_coefficients(grid2, vgauss)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
