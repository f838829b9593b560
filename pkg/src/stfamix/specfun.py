"""Scalar special functions used by every density in the package.

The modified Bessel function of the third kind K_lambda is evaluated in log
space throughout: the densities exponentiate *differences* of log-Bessel
terms, and orders up to ~(nu + p)/2 with nu near 200 would overflow a direct
evaluation long before the differences stop being well conditioned.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy import special

from .errors import DomainError

__all__ = [
    "log_bessel_k",
    "dlog_bessel_k_dorder",
    "log_gamma",
    "digamma",
]


def _debye_coefficient_polys(count: int) -> list[np.ndarray]:
    """Polynomials u_k(t) of the uniform large-order Bessel expansion.

    Built from the exact rational recurrence
    u_{k+1}(t) = t^2 (1 - t^2) u_k'(t) / 2 + (1/8) * int_0^t (1 - 5 s^2) u_k(s) ds,
    so no hand-transcribed coefficient tables are involved.  Returned as
    ascending-power float coefficient arrays.
    """
    polys = [[Fraction(1)]]
    for _ in range(count - 1):
        u = polys[-1]
        du = [i * c for i, c in enumerate(u)][1:]
        term = [Fraction(0)] * (len(u) + 4)
        for i, c in enumerate(du):
            term[i + 2] += c / 2
            term[i + 4] -= c / 2
        integrand = [Fraction(0)] * (len(u) + 2)
        for i, c in enumerate(u):
            integrand[i] += c
            integrand[i + 2] -= 5 * c
        for i, c in enumerate(integrand):
            term[i + 1] += c / (8 * (i + 1))
        polys.append(term)
    return [np.array([float(c) for c in p]) for p in polys]


# Eleven terms keep the expansion at machine precision for the orders where
# it is activated (scipy's scaled K overflows only for order >~ 30).
_DEBYE_POLYS = _debye_coefficient_polys(11)


def _log_k_large_order(order: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log K_order(x) by the uniform asymptotic (Debye) expansion, order > 0."""
    z = x / order
    root = np.hypot(1.0, z)
    t = 1.0 / root
    eta = root + np.log(z / (1.0 + root))
    series = np.zeros_like(z)
    for k, poly in enumerate(_DEBYE_POLYS):
        term = np.polyval(poly[::-1], t) / order**k
        series += -term if k % 2 else term
    return (
        0.5 * np.log(np.pi / (2.0 * order))
        - order * eta
        - 0.25 * np.log1p(z * z)
        + np.log(series)
    )


def _as_float_array(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def log_bessel_k(order, x):
    """log K_order(x), the modified Bessel function of the third kind.

    Accepts scalars or arrays (broadcast together).  Uses scipy's scaled
    evaluation where it stays finite and switches to a log-space uniform
    asymptotic expansion for the large-order regime, so neither large x nor
    large |order| overflows.  K is even in the order: K_order = K_{-order}.
    """
    order_arr = _as_float_array(order, "order")
    x_arr = _as_float_array(x, "x")
    if np.any(x_arr <= 0.0):
        raise DomainError("x must be > 0 for log_bessel_k")
    scalar_in = order_arr.ndim == 0 and x_arr.ndim == 0
    a, x_b = np.broadcast_arrays(np.abs(order_arr), x_arr)
    a = np.atleast_1d(np.ascontiguousarray(a))
    x_b = np.atleast_1d(np.ascontiguousarray(x_b))

    scaled = special.kve(a, x_b)
    with np.errstate(over="ignore", divide="ignore"):
        out = np.log(scaled) - x_b
    overflow = ~np.isfinite(scaled)
    if np.any(overflow):
        # kve only overflows when the order is large, where the expansion
        # is accurate to machine precision.
        out[overflow] = _log_k_large_order(a[overflow], x_b[overflow])
    return float(out[0]) if scalar_in else out


def dlog_bessel_k_dorder(order, x):
    """d/d(order) of log K_order(x), by central finite differences.

    The step adapts to the order magnitude; the result feeds the E[log Y]
    expectation whose only consumer is a scalar root solve, so 1e-6 accuracy
    is ample.  Since K is even in the order, the derivative is odd and
    vanishes at order 0.
    """
    order_arr = _as_float_array(order, "order")
    scalar_in = order_arr.ndim == 0 and np.ndim(x) == 0
    h = np.maximum(1e-6, 1e-6 * np.abs(order_arr))
    hi = log_bessel_k(order_arr + h, x)
    lo = log_bessel_k(order_arr - h, x)
    out = (hi - lo) / (2.0 * h)
    return float(out) if scalar_in else out


def log_gamma(x):
    """log Gamma(x) for x > 0."""
    x_arr = _as_float_array(x, "x")
    if np.any(x_arr <= 0.0):
        raise DomainError("x must be > 0 for log_gamma")
    out = special.gammaln(x_arr)
    return float(out) if np.isscalar(x) else out


def digamma(x):
    """The digamma function d/dx log Gamma(x) for x > 0."""
    x_arr = _as_float_array(x, "x")
    if np.any(x_arr <= 0.0):
        raise DomainError("x must be > 0 for digamma")
    out = special.digamma(x_arr)
    return float(out) if np.isscalar(x) else out
