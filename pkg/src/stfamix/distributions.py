"""Densities, conditional laws and samplers for the skew-t / generalized
hyperbolic family, plus the low-rank covariance algebra they share.

All densities are returned on the log scale; callers exponentiate only
inside normalized ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionError, DomainError
from .specfun import dlog_bessel_k_dorder, log_bessel_k, log_gamma

__all__ = [
    "GigParams",
    "GhParams",
    "SkewTParams",
    "LowRankCov",
    "MIN_SKEWNESS_NORM",
    "gig_log_density",
    "gig_expectations",
    "gh_log_density",
    "skew_t_log_density",
    "skew_t_latent_moments",
    "conditional_gig_given_x",
    "sample_skew_t",
    "woodbury_inverse",
]

_LOG_2PI = float(np.log(2.0 * np.pi))

# This skew-t form is undefined at exactly zero skewness (the conditional
# law of the latent scale degenerates); the fitting code initializes alpha
# near (not at) zero, so the floor never binds in practice.
MIN_SKEWNESS_NORM = 1e-8


@dataclass(frozen=True)
class GigParams:
    """Parameters (psi, chi, lam) of a generalized inverse Gaussian law."""

    psi: float
    chi: float
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.psi) and self.psi > 0.0):
            raise DomainError("GigParams.psi must be a positive finite real")
        if not (np.isfinite(self.chi) and self.chi > 0.0):
            raise DomainError("GigParams.chi must be a positive finite real")
        if not np.isfinite(self.lam):
            raise DomainError("GigParams.lam must be finite")


@dataclass(frozen=True)
class LowRankCov:
    """Covariance in factored form: loadings @ loadings.T + diag(psi_diag)."""

    loadings: np.ndarray
    psi_diag: np.ndarray

    def __post_init__(self):
        loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        psi = np.asarray(self.psi_diag, dtype=float).ravel()
        if loadings.shape[0] != psi.shape[0]:
            raise DomainError("loadings rows must match psi_diag length")
        if not np.all(np.isfinite(loadings)):
            raise DomainError("loadings must be finite")
        if not np.all(np.isfinite(psi)) or np.any(psi <= 0.0):
            raise DomainError("psi_diag entries must be positive finite reals")
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "psi_diag", psi)

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def q(self) -> int:
        return self.loadings.shape[1]

    def dense(self) -> np.ndarray:
        """Materialize the p x p matrix (testing / small-p convenience)."""
        return self.loadings @ self.loadings.T + np.diag(self.psi_diag)


@dataclass(frozen=True)
class GhParams:
    """Generalized hyperbolic parameters (lam, chi, psi, mu, sigma, alpha)."""

    lam: float
    chi: float
    psi: float
    mu: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.chi) and self.chi > 0.0):
            raise DomainError("GhParams.chi must be a positive finite real")
        if not (np.isfinite(self.psi) and self.psi > 0.0):
            raise DomainError("GhParams.psi must be a positive finite real")
        if not np.isfinite(self.lam):
            raise DomainError("GhParams.lam must be finite")
        mu = np.asarray(self.mu, dtype=float).ravel()
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (mu.size, mu.size) or alpha.size != mu.size:
            raise DomainError("GhParams dimensions disagree")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class SkewTParams:
    """Skew-t parameters: location mu, scale sigma, skewness alpha, dof nu.

    ``sigma`` may be a dense symmetric positive-definite matrix or a
    :class:`LowRankCov`; the latter routes all linear algebra through the
    Woodbury identity so only q x q systems are factorized.
    """

    mu: np.ndarray
    sigma: np.ndarray | LowRankCov
    alpha: np.ndarray
    nu: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        if alpha.size != mu.size:
            raise DomainError("SkewTParams alpha/mu dimensions disagree")
        if not (np.isfinite(self.nu) and self.nu > 0.0):
            raise DomainError("SkewTParams.nu must be a positive finite real")
        if isinstance(self.sigma, LowRankCov):
            if self.sigma.p != mu.size:
                raise DomainError("SkewTParams sigma/mu dimensions disagree")
        else:
            sigma = np.asarray(self.sigma, dtype=float)
            if sigma.shape != (mu.size, mu.size):
                raise DomainError("SkewTParams sigma/mu dimensions disagree")
            object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)

    @property
    def p(self) -> int:
        return self.mu.size


def gig_log_density(y, params: GigParams):
    """log density of GIG(psi, chi, lam) at y > 0."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(y_arr)) or np.any(y_arr <= 0.0):
        raise DomainError("gig_log_density requires y > 0")
    omega = np.sqrt(params.psi * params.chi)
    out = (
        0.5 * params.lam * (np.log(params.psi) - np.log(params.chi))
        + (params.lam - 1.0) * np.log(y_arr)
        - np.log(2.0)
        - log_bessel_k(params.lam, omega)
        - 0.5 * (params.psi * y_arr + params.chi / y_arr)
    )
    return float(out) if np.isscalar(y) else out


def gig_expectations(params: GigParams) -> tuple[float, float, float]:
    """The closed-form moments (E[Y], E[1/Y], E[log Y]) of a GIG law."""
    omega = np.sqrt(params.psi * params.chi)
    ratio = np.exp(
        log_bessel_k(params.lam + 1.0, omega) - log_bessel_k(params.lam, omega)
    )
    half_log = 0.5 * (np.log(params.chi) - np.log(params.psi))
    e_y = np.exp(half_log) * ratio
    e_inv_y = np.exp(-half_log) * ratio - 2.0 * params.lam / params.chi
    e_log_y = half_log + dlog_bessel_k_dorder(params.lam, omega)
    return float(e_y), float(e_inv_y), float(e_log_y)


def _dense_inverse(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """(inverse, log-determinant) of a dense SPD matrix via Cholesky."""
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(
            "scale matrix is not symmetric positive definite"
        ) from exc
    inv_chol = np.linalg.solve(chol, np.eye(sigma.shape[0]))
    inv = inv_chol.T @ inv_chol
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return inv, log_det


def woodbury_inverse(cov: LowRankCov) -> tuple[np.ndarray, float]:
    """Inverse and log-determinant of loadings @ loadings.T + diag(psi).

    Only the q x q core I_q + L' Psi^{-1} L is factorized; the p x p inverse
    is assembled from rank-q corrections around the diagonal term.
    """
    psi_inv = 1.0 / cov.psi_diag
    scaled = psi_inv[:, None] * cov.loadings          # Psi^{-1} Lambda
    core = np.eye(cov.q) + cov.loadings.T @ scaled    # I_q + L' Psi^{-1} L
    try:
        chol = np.linalg.cholesky(core)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("singular q x q Woodbury core") from exc
    half = np.linalg.solve(chol, scaled.T)            # chol^{-1} L' Psi^{-1}
    inv = np.diag(psi_inv) - half.T @ half
    log_det = float(np.sum(np.log(cov.psi_diag))) + 2.0 * float(
        np.sum(np.log(np.diag(chol)))
    )
    return inv, log_det


def _sigma_inverse(sigma: np.ndarray | LowRankCov) -> tuple[np.ndarray, float]:
    if isinstance(sigma, LowRankCov):
        return woodbury_inverse(sigma)
    return _dense_inverse(np.asarray(sigma, dtype=float))


def _rows(x, p: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != p:
        raise DomainError(f"x has {arr.shape[1]} columns, expected {p}")
    return arr, single


def gh_log_density(x, params: GhParams):
    """log density of the generalized hyperbolic distribution.

    ``x`` may be a single p-vector or an (n, p) batch.
    """
    inv, log_det = _sigma_inverse(params.sigma)
    xs, single = _rows(x, params.mu.size)
    p = params.mu.size
    diff = xs - params.mu
    maha = np.einsum("ij,jk,ik->i", diff, inv, diff)
    sia = inv @ params.alpha
    rate = params.psi + float(params.alpha @ sia)
    shift = params.chi + maha
    order = params.lam - p / 2.0
    omega0 = np.sqrt(params.chi * params.psi)
    out = (
        0.5 * order * (np.log(shift) - np.log(rate))
        + 0.5 * params.lam * (np.log(params.psi) - np.log(params.chi))
        + log_bessel_k(order, np.sqrt(rate * shift))
        - 0.5 * p * _LOG_2PI
        - 0.5 * log_det
        - log_bessel_k(params.lam, omega0)
        + diff @ sia
    )
    return float(out[0]) if single else out


def _skew_t_machinery(params: SkewTParams):
    """Shared pieces of the skew-t density and its conditional GIG law."""
    inv, log_det = _sigma_inverse(params.sigma)
    if float(np.linalg.norm(params.alpha)) < MIN_SKEWNESS_NORM:
        raise DomainError(
            "skew-t density undefined at zero skewness; use ||alpha|| >= 1e-8"
        )
    sia = inv @ params.alpha
    rate = float(params.alpha @ sia)
    return inv, log_det, sia, rate


def skew_t_log_density(x, params: SkewTParams):
    """log density of the skew-t distribution (the psi -> 0 GH limit)."""
    inv, log_det, sia, rate = _skew_t_machinery(params)
    xs, single = _rows(x, params.p)
    p, nu = params.p, params.nu
    diff = xs - params.mu
    maha = np.einsum("ij,jk,ik->i", diff, inv, diff)
    shift = nu + maha
    out = (
        -0.25 * (nu + p) * (np.log(shift) - np.log(rate))
        + 0.5 * nu * np.log(nu)
        + log_bessel_k(0.5 * (nu + p), np.sqrt(rate * shift))
        - 0.5 * p * _LOG_2PI
        - 0.5 * log_det
        - log_gamma(0.5 * nu)
        - (0.5 * nu - 1.0) * np.log(2.0)
        + diff @ sia
    )
    return float(out[0]) if single else out


def conditional_gig_given_x(x, params: SkewTParams) -> GigParams:
    """Law of the latent scale given an observation:
    GIG(alpha' Sigma^{-1} alpha, nu + maha(x), -(nu + p)/2)."""
    inv, _, _, rate = _skew_t_machinery(params)
    xs, single = _rows(x, params.p)
    if not single:
        raise DomainError("conditional_gig_given_x takes a single observation")
    diff = xs[0] - params.mu
    maha = float(diff @ inv @ diff)
    return GigParams(
        psi=rate, chi=params.nu + maha, lam=-0.5 * (params.nu + params.p)
    )


def skew_t_latent_moments(x, params: SkewTParams, with_log_moment: bool = True):
    """Per-row log density plus conditional moments of the latent scale.

    Returns ``(log_density, e_y, e_inv_y, e_log_y)``, each of shape (n,).
    Shares one pass of covariance algebra across the four outputs, which is
    what the E-step consumes for every observation/component pair.  The log
    moment costs two extra Bessel evaluations per row and only feeds the
    degrees-of-freedom update, so callers that do not need it may switch it
    off (``e_log_y`` is then returned as zeros).
    """
    inv, log_det, sia, rate = _skew_t_machinery(params)
    xs, _ = _rows(x, params.p)
    p, nu = params.p, params.nu
    diff = xs - params.mu
    maha = np.einsum("ij,jk,ik->i", diff, inv, diff)
    shift = nu + maha
    lam = -0.5 * (nu + p)
    omega = np.sqrt(rate * shift)
    log_k_lam = log_bessel_k(lam, omega)
    half_log = 0.5 * (np.log(shift) - np.log(rate))
    log_density = (
        lam * half_log
        + 0.5 * nu * np.log(nu)
        + log_k_lam
        - 0.5 * p * _LOG_2PI
        - 0.5 * log_det
        - log_gamma(0.5 * nu)
        - (0.5 * nu - 1.0) * np.log(2.0)
        + diff @ sia
    )
    ratio = np.exp(log_bessel_k(lam + 1.0, omega) - log_k_lam)
    e_y = np.exp(half_log) * ratio
    e_inv_y = np.exp(-half_log) * ratio - 2.0 * lam / shift
    if with_log_moment:
        e_log_y = half_log + dlog_bessel_k_dorder(
            np.full_like(shift, lam), omega
        )
    else:
        e_log_y = np.zeros_like(shift)
    return log_density, e_y, e_inv_y, e_log_y


def sample_skew_t(params: SkewTParams, n: int, seed: int) -> np.ndarray:
    """Draw n rows from the skew-t factor representation.

    Uses X = mu + Y alpha + sqrt(Y) (Lambda U + eps) with Y inverse-gamma
    (nu/2, nu/2) drawn as the reciprocal of a gamma variate.  Deterministic
    given ``seed``; requires ``params.sigma`` in LowRankCov form.
    """
    if not isinstance(params.sigma, LowRankCov):
        raise DomainError("sample_skew_t requires sigma as LowRankCov")
    if n < 1:
        raise DomainError("n must be >= 1")
    cov = params.sigma
    rng = np.random.default_rng(seed)
    y = 1.0 / rng.gamma(shape=params.nu / 2.0, scale=2.0 / params.nu, size=n)
    factors = rng.standard_normal((n, cov.q))
    noise = rng.standard_normal((n, cov.p)) * np.sqrt(cov.psi_diag)
    return (
        params.mu
        + y[:, None] * params.alpha
        + np.sqrt(y)[:, None] * (factors @ cov.loadings.T + noise)
    )
