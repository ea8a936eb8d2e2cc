import numpy as np
import pytest
from scipy import integrate

from exact_uncertainty.grid import Grid1D


@pytest.fixture(scope="session")
def grid():
    return Grid1D(-20.0, 20.0, 1024)


def quad(f, a=-np.inf, b=np.inf):
    """Adaptive quadrature, independent of the grid rectangle rule."""
    val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-13, limit=400)
    return val


def gauss_density(x, x0=0.0, sigma=1.0):
    return np.exp(-((x - x0) ** 2) / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))
