"""Two-cycle AECM fitting engine for one (G, q, constraint) configuration.

Each iteration runs E-step -> CM-1 (pi, mu, alpha, nu) -> E-step refresh ->
CM-2 (loadings, error variances).  The first cycle treats the component
labels and latent scales as missing; the second additionally treats the
latent factors as missing, which is what makes the loading updates take the
classic factor-analyzer form driven by a skew-adjusted scatter matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.cluster import KMeans

from .distributions import (
    SkewTParams,
    skew_t_latent_moments,
    woodbury_inverse,
)
from .errors import DomainError, FitFailureError, NumericalError
from .model import (
    ComponentParams,
    ConstraintId,
    MixtureModel,
    assemble_covariance,
    count_free_params,
)
from .specfun import digamma

__all__ = [
    "FitConfig",
    "LatentExpectations",
    "ComponentAggregates",
    "FitReport",
    "initialize",
    "e_step",
    "cm_step_1",
    "nu_solve",
    "component_scatter",
    "cm_step_2",
    "fit",
]

PSI_FLOOR = 1e-6
INIT_SKEWNESS = 0.01
INIT_NU = 50.0


@dataclass(frozen=True)
class FitConfig:
    """Knobs of a single fit: iteration budget, Aitken stopping tolerance,
    degrees-of-freedom bounds, seeding and collapse guards."""

    max_iter: int = 500
    aitken_tol: float = 1e-2
    nu_bounds: tuple[float, float] = (2.0, 200.0)
    seed: int = 1
    kmeans_restarts: int = 10
    min_component_size: float | None = None  # resolved to 1.5 * (q + 1)

    def __post_init__(self):
        if self.max_iter < 3:
            raise DomainError("max_iter must be >= 3")
        if self.aitken_tol <= 0.0:
            raise DomainError("aitken_tol must be positive")
        lo, hi = self.nu_bounds
        if not (2.0 <= lo < hi):
            raise DomainError("nu_bounds must satisfy 2 <= lo < hi")

    def resolved_min_size(self, q: int) -> float:
        if self.min_component_size is not None:
            return self.min_component_size
        return 1.5 * (q + 1)


@dataclass(frozen=True)
class LatentExpectations:
    """Per-(observation, component) posterior quantities.

    ``z`` are responsibilities (rows sum to 1); ``a``, ``b`` and ``c`` are
    the conditional expectations of the latent scale, its reciprocal and its
    logarithm.
    """

    z: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class ComponentAggregates:
    """Responsibility-weighted sums feeding the CM updates of one component."""

    n_g: float
    a_bar: float
    b_bar: float
    m_g: float
    x_bar: np.ndarray
    scatter: np.ndarray


@dataclass(frozen=True)
class FitReport:
    """Outcome of one fit: final model, trace and hard classifications."""

    model: MixtureModel
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    hard_labels: np.ndarray

    @property
    def ascending(self) -> bool:
        return bool(np.all(np.diff(self.loglik_trace) >= -1e-8))


def _within_cluster_stats(data: np.ndarray, labels: np.ndarray, g: int):
    """Per-cluster size, mean and (biased) covariance from hard labels."""
    stats = []
    for k in range(g):
        members = data[labels == k]
        n_k = members.shape[0]
        if n_k == 0:
            return None
        mean = members.mean(axis=0)
        if n_k == 1:
            cov = np.zeros((data.shape[1], data.shape[1]))
        else:
            centered = members - mean
            cov = centered.T @ centered / n_k
        stats.append((n_k, mean, cov))
    return stats


def _leading_factor_block(cov: np.ndarray, q: int) -> np.ndarray:
    """Loadings from the top q eigenpairs: eigenvectors scaled by root
    eigenvalues."""
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1][:q]
    scaled = np.sqrt(np.clip(values[order], 0.0, None))
    return vectors[:, order] * scaled


def _align_columns(loadings: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Flip column signs to agree with a reference (eigenvector signs are
    arbitrary; naive averaging across components could cancel to zero)."""
    signs = np.sign(np.sum(loadings * reference, axis=0))
    signs[signs == 0.0] = 1.0
    return loadings * signs


def initialize(
    data: np.ndarray,
    g: int,
    q: int,
    constraint: ConstraintId,
    config: FitConfig,
) -> MixtureModel:
    """Starting model from k-means memberships.

    Means and within-cluster covariances come from the hard k-means
    partition; loadings take the leading q eigenpairs of each covariance,
    error variances the residual diagonal (floored); skewness starts near
    zero and the degrees of freedom at 50.  Constraint ties are applied by
    size-weighted averaging of the tied quantities.
    """
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    if n <= g * (q + 1):
        raise DomainError("too few observations for the requested (g, q)")

    stats = None
    for attempt in range(config.kmeans_restarts):
        km = KMeans(
            n_clusters=g,
            n_init=config.kmeans_restarts,
            random_state=config.seed + attempt,
            algorithm="lloyd",
        ).fit(data)
        stats = _within_cluster_stats(data, km.labels_, g)
        if stats is not None:
            break
    if stats is None:
        raise FitFailureError("k-means produced an empty cluster on every restart")

    sizes = np.array([s[0] for s in stats], dtype=float)
    means = [s[1] for s in stats]
    covs = [s[2] for s in stats]
    weights = sizes / n

    loadings = [_leading_factor_block(cov, q) for cov in covs]
    if constraint.loading_constrained:
        anchor = loadings[int(np.argmax(sizes))]
        aligned = [_align_columns(lmb, anchor) for lmb in loadings]
        shared = sum(w * lmb for w, lmb in zip(weights, aligned))
        loadings = [shared] * g

    psis = [
        np.maximum(np.diag(cov) - np.sum(lmb * lmb, axis=1), PSI_FLOOR)
        for cov, lmb in zip(covs, loadings)
    ]
    if constraint.isotropic:
        psis = [np.full(p, psi.mean()) for psi in psis]
    if constraint.error_constrained:
        shared_psi = sum(w * psi for w, psi in zip(weights, psis))
        psis = [shared_psi] * g
    psis = [np.maximum(psi, PSI_FLOOR) for psi in psis]

    components = tuple(
        ComponentParams(
            pi=weights[k],
            mu=means[k],
            loadings=loadings[k],
            psi_diag=psis[k],
            alpha=np.full(p, INIT_SKEWNESS),
            nu=INIT_NU,
        )
        for k in range(g)
    )
    return MixtureModel(g=g, q=q, constraint=constraint, components=components)


def _latent_pass(
    data: np.ndarray, model: MixtureModel, with_log_moment: bool
) -> tuple[LatentExpectations, float]:
    """One full E-step plus the observed-data log-likelihood it implies."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    log_dens = np.empty((n, model.g))
    a = np.empty((n, model.g))
    b = np.empty((n, model.g))
    c = np.empty((n, model.g))
    for j, comp in enumerate(model.components):
        params = SkewTParams(
            comp.mu, assemble_covariance(comp), comp.alpha, comp.nu
        )
        log_dens[:, j], a[:, j], b[:, j], c[:, j] = skew_t_latent_moments(
            data, params, with_log_moment=with_log_moment
        )
    weighted = log_dens + np.log([comp.pi for comp in model.components])
    top = np.max(weighted, axis=1)
    bad = ~np.isfinite(top)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise NumericalError(
            f"all component densities underflowed for observation {row}"
        )
    row_logsum = top + np.log(
        np.sum(np.exp(weighted - top[:, None]), axis=1)
    )
    z = np.exp(weighted - row_logsum[:, None])
    expectations = LatentExpectations(z=z, a=a, b=b, c=c)
    return expectations, float(np.sum(row_logsum))


def e_step(data: np.ndarray, model: MixtureModel) -> LatentExpectations:
    """Responsibilities and conditional latent-scale moments."""
    return _latent_pass(data, model, with_log_moment=True)[0]


def nu_solve(
    z_g: np.ndarray,
    b_g: np.ndarray,
    c_g: np.ndarray,
    bounds: tuple[float, float] = (2.0, 200.0),
) -> float:
    """Root of the degrees-of-freedom estimating equation by bisection.

    Solves log(nu/2) + 1 - digamma(nu/2) = mean of z-weighted (c + b) on the
    given interval.  The left side is strictly decreasing, so when no sign
    change exists the nearer bound is returned.
    """
    n_g = float(np.sum(z_g))
    if n_g <= 0.0:
        raise NumericalError("nu_solve requires positive component mass")
    target = float(np.sum(z_g * (c_g + b_g))) / n_g
    if not np.isfinite(target):
        raise NumericalError("non-finite aggregate in nu_solve")

    def gap(nu: float) -> float:
        return np.log(nu / 2.0) + 1.0 - digamma(nu / 2.0) - target

    lo, hi = bounds
    if gap(lo) <= 0.0:
        return lo
    if gap(hi) >= 0.0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    return 0.5 * (lo + hi)


def cm_step_1(
    data: np.ndarray,
    expectations: LatentExpectations,
    model: MixtureModel,
    nu_bounds: tuple[float, float] = (2.0, 200.0),
) -> MixtureModel:
    """First conditional maximization: mixing proportions, locations,
    skewness vectors and degrees of freedom.

    Every sum over observations is responsibility-weighted.  The location
    and skewness solve the joint stationarity system; m_g = sum_i z_ig
    (a_bar_g b_ig - 1) is its (always non-negative) determinant scale.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    z, an, bn = expectations.z, expectations.a, expectations.b
    new_components = []
    for j, comp in enumerate(model.components):
        z_g = z[:, j]
        n_g = float(z_g.sum())
        a_bar = float(np.sum(z_g * an[:, j])) / n_g
        b_bar = float(np.sum(z_g * bn[:, j])) / n_g
        weights_mu = z_g * (a_bar * bn[:, j] - 1.0)
        m_g = float(weights_mu.sum())
        if abs(m_g) < 1e-10:
            raise NumericalError(
                f"degenerate latent-scale geometry in component {j} (m_g ~ 0)"
            )
        mu = weights_mu @ data / m_g
        alpha = (z_g * (b_bar - bn[:, j])) @ data / m_g
        nu = nu_solve(z_g, bn[:, j], expectations.c[:, j], nu_bounds)
        new_components.append(
            replace(comp, pi=n_g / n, mu=mu, alpha=alpha, nu=nu)
        )
    return replace(model, components=tuple(new_components))


def component_scatter(
    data: np.ndarray,
    z_g: np.ndarray,
    b_g: np.ndarray,
    a_bar: float,
    mu: np.ndarray,
    alpha: np.ndarray,
) -> np.ndarray:
    """Skew-adjusted scatter matrix driving the loading/error updates.

    Reduces to the ordinary within-component sample covariance when the
    skewness vanishes and the latent scale is degenerate (b = 1).  Output is
    symmetrized exactly.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n_g = float(z_g.sum())
    diff = data - mu
    scatter = (z_g * b_g)[:, None] * diff
    scatter = scatter.T @ diff / n_g
    x_bar = z_g @ data / n_g
    gap = x_bar - mu
    scatter -= np.outer(alpha, gap) + np.outer(gap, alpha)
    scatter += a_bar * np.outer(alpha, alpha)
    return 0.5 * (scatter + scatter.T)


def component_aggregates(
    data: np.ndarray,
    expectations: LatentExpectations,
    model: MixtureModel,
) -> list[ComponentAggregates]:
    """Aggregates (including scatters) for every component, using the
    current model's locations and skewness vectors."""
    z, an, bn = expectations.z, expectations.a, expectations.b
    data = np.atleast_2d(np.asarray(data, dtype=float))
    out = []
    for j, comp in enumerate(model.components):
        z_g = z[:, j]
        n_g = float(z_g.sum())
        a_bar = float(np.sum(z_g * an[:, j])) / n_g
        b_bar = float(np.sum(z_g * bn[:, j])) / n_g
        m_g = float(np.sum(z_g * (a_bar * bn[:, j] - 1.0)))
        x_bar = z_g @ data / n_g
        scatter = component_scatter(
            data, z_g, bn[:, j], a_bar, comp.mu, comp.alpha
        )
        out.append(
            ComponentAggregates(
                n_g=n_g,
                a_bar=a_bar,
                b_bar=b_bar,
                m_g=m_g,
                x_bar=x_bar,
                scatter=scatter,
            )
        )
    return out


def _solve_tied_loadings(
    sizes: np.ndarray,
    psi_invs: list[np.ndarray],
    scatters: list[np.ndarray],
    betas: list[np.ndarray],
    thetas: list[np.ndarray],
    error_tied: bool,
) -> np.ndarray:
    """Shared-loading update.

    With a common error-variance matrix the stationarity system collapses to
    a single q x q solve; otherwise it is a generalized Sylvester equation,
    solved by pq x pq vectorization (row-major: vec(P L T) = (P kron T')
    vec(L) for diagonal P).
    """
    p, q = scatters[0].shape[0], thetas[0].shape[0]
    if error_tied:
        lhs = sum(n * theta for n, theta in zip(sizes, thetas))
        rhs = sum(
            n * s @ beta.T for n, s, beta in zip(sizes, scatters, betas)
        )
        try:
            return np.linalg.solve(lhs.T, rhs.T).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular tied-loading system") from exc
    system = np.zeros((p * q, p * q))
    rhs = np.zeros(p * q)
    for n, psi_inv, s, beta, theta in zip(
        sizes, psi_invs, scatters, betas, thetas
    ):
        system += n * np.kron(np.diag(psi_inv), theta.T)
        rhs += n * (psi_inv[:, None] * (s @ beta.T)).ravel()
    try:
        return np.linalg.solve(system, rhs).reshape(p, q)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular tied-loading Sylvester system") from exc


def cm_step_2(
    data: np.ndarray,
    expectations: LatentExpectations,
    scatters: list[np.ndarray],
    model: MixtureModel,
) -> MixtureModel:
    """Second conditional maximization: loadings and error variances under
    the covariance constraint, via the Woodbury identity (only q x q
    factorizations touch the loadings)."""
    n = expectations.z.shape[0]
    sizes = expectations.z.sum(axis=0)
    q = model.q
    constraint = model.constraint

    betas, thetas, psi_invs = [], [], []
    for j, comp in enumerate(model.components):
        inv, _ = woodbury_inverse(assemble_covariance(comp))
        beta = comp.loadings.T @ inv
        theta = np.eye(q) - beta @ comp.loadings + beta @ scatters[j] @ beta.T
        theta = 0.5 * (theta + theta.T)
        betas.append(beta)
        thetas.append(theta)
        psi_invs.append(1.0 / comp.psi_diag)

    if constraint.loading_constrained:
        shared = _solve_tied_loadings(
            sizes, psi_invs, scatters, betas, thetas, constraint.error_constrained
        )
        new_loadings = [shared] * model.g
    else:
        new_loadings = []
        for j in range(model.g):
            try:
                lam = np.linalg.solve(
                    thetas[j].T, (scatters[j] @ betas[j].T).T
                ).T
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"singular factor-moment matrix in component {j}"
                ) from exc
            new_loadings.append(lam)

    diags = []
    for j in range(model.g):
        lam, beta, theta, s = new_loadings[j], betas[j], thetas[j], scatters[j]
        cross = lam @ (beta @ s)
        diag = (
            np.diag(s)
            - np.diag(cross)
            - np.diag(cross.T)
            + np.einsum("ij,jk,ik->i", lam, theta, lam)
        )
        diags.append(diag)

    if constraint.error_constrained:
        pooled = sum(n_g / n * d for n_g, d in zip(sizes, diags))
        diags = [pooled] * model.g
    if constraint.isotropic:
        diags = [np.full(model.p, d.mean()) for d in diags]
    new_psis = [np.maximum(d, PSI_FLOOR) for d in diags]
    if constraint.error_constrained:
        new_psis = [new_psis[0]] * model.g

    new_components = tuple(
        replace(comp, loadings=new_loadings[j], psi_diag=new_psis[j])
        for j, comp in enumerate(model.components)
    )
    return replace(model, components=new_components)


def _aitken_converged(trace: list[float], tol: float) -> bool:
    """Aitken-acceleration stopping rule on the last three log-likelihoods."""
    l_prev, l_mid, l_new = trace[-3], trace[-2], trace[-1]
    inc_old = l_mid - l_prev
    inc_new = l_new - l_mid
    if abs(inc_old) < 1e-12:
        return abs(inc_new) < 1e-12
    rate = inc_new / inc_old
    if rate >= 1.0:
        return False
    projected_gain = inc_new / (1.0 - rate)
    return 0.0 <= projected_gain < tol


def _check_component_mass(sizes: np.ndarray, min_size: float) -> None:
    if np.any(sizes < min_size):
        j = int(np.argmin(sizes))
        raise FitFailureError(
            f"component {j} collapsed (mass {sizes[j]:.3g} < {min_size:.3g})"
        )


def fit(
    data: np.ndarray,
    g: int,
    q: int,
    constraint: ConstraintId,
    config: FitConfig | None = None,
) -> FitReport:
    """Fit one mixture configuration by AECM.

    Alternates the two conditional-maximization cycles, each preceded by an
    E-step, and monitors the observed-data log-likelihood with the Aitken
    stopping rule.  Raises :class:`FitFailureError` when a component
    collapses; grid search records such fits as non-candidates.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if not np.all(np.isfinite(data)):
        raise DomainError("data must be finite with no missing cells")
    config = config or FitConfig()
    min_size = config.resolved_min_size(q)

    model = initialize(data, g, q, constraint, config)
    trace: list[float] = []
    converged = False
    iterations = 0
    expectations = None
    for _ in range(config.max_iter):
        # The log-likelihood of the current model falls out of this E-step,
        # so the trace entry for the previous iteration costs nothing extra.
        expectations, loglik = _latent_pass(data, model, with_log_moment=True)
        trace.append(loglik)
        if len(trace) >= 3 and _aitken_converged(trace, config.aitken_tol):
            converged = True
            break
        _check_component_mass(expectations.z.sum(axis=0), min_size)
        model = cm_step_1(data, expectations, model, config.nu_bounds)

        second, _ = _latent_pass(data, model, with_log_moment=False)
        _check_component_mass(second.z.sum(axis=0), min_size)
        aggregates = component_aggregates(data, second, model)
        model = cm_step_2(
            data, second, [agg.scatter for agg in aggregates], model
        )
        iterations += 1

    if not converged:
        expectations, loglik = _latent_pass(data, model, with_log_moment=False)
        trace.append(loglik)
    hard_labels = np.argmax(expectations.z, axis=1)
    from .selection import bic as bic_score  # local import to avoid a cycle

    _, rho = count_free_params(constraint, data.shape[1], q, g)
    model = model.with_loglik(
        trace[-1], bic_score(trace[-1], rho, data.shape[0])
    )
    return FitReport(
        model=model,
        loglik_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        hard_labels=hard_labels,
    )
