"""Shared test oracles: quadrature helpers kept independent of the code
paths they check."""

import numpy as np
import pytest
from scipy import integrate

from stfamix.distributions import GigParams, gig_log_density


def gig_quad_moment(params: GigParams, transform=lambda y: 1.0) -> float:
    """Adaptive quadrature of E[transform(Y)] under a GIG law.

    Integrates on the log scale (y = e^t) so both endpoints are tame; used
    only as a test oracle, never by the library itself.
    """

    def integrand(t):
        y = np.exp(t)
        return transform(y) * np.exp(gig_log_density(y, params) + t)

    # Piecewise so the initial nodes cannot straddle a concentrated bump.
    cuts = [-40.0, -8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0, 40.0]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        value, _ = integrate.quad(
            integrand, lo, hi, limit=400, epsabs=1e-13, epsrel=1e-13
        )
        total += value
    return total


def quad_density_mass(logpdf, pieces) -> float:
    """Integrate exp(logpdf) over consecutive intervals given by ``pieces``."""
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        value, _ = integrate.quad(
            lambda x: np.exp(logpdf(x)), lo, hi, limit=400, epsabs=1e-12,
            epsrel=1e-12,
        )
        total += value
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
