"""The mixture data model: covariance-constraint identifiers, per-component
parameters, free-parameter counting and the mixture log-density."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .distributions import LowRankCov, SkewTParams, skew_t_log_density
from .errors import DomainError

__all__ = [
    "ConstraintId",
    "ALL_CONSTRAINTS",
    "ComponentParams",
    "MixtureModel",
    "mixture_log_density",
    "count_free_params",
    "assemble_covariance",
]


@dataclass(frozen=True)
class ConstraintId:
    """One of the eight covariance structures, encoded as three toggles.

    The three-letter name orders the toggles as (loading matrix, error
    variance, isotropic); C means the constraint is imposed, U that it is
    not.  CCC is the most parsimonious member, UUU the fully unconstrained
    one.
    """

    loading_constrained: bool
    error_constrained: bool
    isotropic: bool

    @property
    def id(self) -> str:
        return "".join(
            "C" if flag else "U"
            for flag in (
                self.loading_constrained,
                self.error_constrained,
                self.isotropic,
            )
        )

    @classmethod
    def from_id(cls, name: str) -> "ConstraintId":
        text = name.strip().upper()
        if len(text) != 3 or any(ch not in "CU" for ch in text):
            raise DomainError(
                f"unknown model id {name!r}; expected three letters from {{C,U}}"
            )
        return cls(*(ch == "C" for ch in text))

    def __str__(self) -> str:
        return self.id


ALL_CONSTRAINTS: tuple[ConstraintId, ...] = tuple(
    ConstraintId.from_id(name)
    for name in ("CCC", "CCU", "CUC", "CUU", "UCC", "UCU", "UUC", "UUU")
)


@dataclass(frozen=True)
class ComponentParams:
    """Parameters of one mixture component."""

    pi: float
    mu: np.ndarray
    loadings: np.ndarray
    psi_diag: np.ndarray
    alpha: np.ndarray
    nu: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        psi = np.asarray(self.psi_diag, dtype=float).ravel()
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        if not (0.0 < self.pi <= 1.0):
            raise DomainError("mixing proportion must lie in (0, 1]")
        if loadings.shape[0] != mu.size or psi.size != mu.size or alpha.size != mu.size:
            raise DomainError("component parameter dimensions disagree")
        if np.any(psi <= 0.0):
            raise DomainError("error variances must be positive")
        if not (np.isfinite(self.nu) and self.nu >= 2.0):
            raise DomainError("degrees of freedom must be >= 2")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "psi_diag", psi)
        object.__setattr__(self, "alpha", alpha)

    @property
    def p(self) -> int:
        return self.mu.size

    @property
    def q(self) -> int:
        return self.loadings.shape[1]


@dataclass(frozen=True)
class MixtureModel:
    """A fitted or in-progress mixture: G components with q factors each."""

    g: int
    q: int
    constraint: ConstraintId
    components: tuple[ComponentParams, ...]
    loglik: float = float("nan")
    bic: float = float("nan")

    def __post_init__(self):
        components = tuple(self.components)
        if len(components) != self.g or self.g < 1:
            raise DomainError("component list does not match g")
        p = components[0].p
        if any(c.p != p or c.q != self.q for c in components):
            raise DomainError("component dimensions disagree")
        if self.q >= p:
            raise DomainError("factor count q must be smaller than dimension p")
        total = sum(c.pi for c in components)
        if abs(total - 1.0) > 1e-8:
            raise DomainError("mixing proportions must sum to 1")
        self._check_ties(components)
        object.__setattr__(self, "components", components)

    def _check_ties(self, components) -> None:
        c0 = components[0]
        if self.constraint.loading_constrained and any(
            not np.allclose(c.loadings, c0.loadings) for c in components
        ):
            raise DomainError("loading matrices must be tied for this model")
        if self.constraint.error_constrained and any(
            not np.allclose(c.psi_diag, c0.psi_diag) for c in components
        ):
            raise DomainError("error variances must be tied for this model")
        if self.constraint.isotropic and any(
            not np.allclose(c.psi_diag, c.psi_diag[0]) for c in components
        ):
            raise DomainError("error variances must be isotropic for this model")

    @property
    def p(self) -> int:
        return self.components[0].p

    def with_loglik(self, loglik: float, bic: float | None = None) -> "MixtureModel":
        return replace(
            self, loglik=loglik, bic=self.bic if bic is None else bic
        )


def assemble_covariance(component: ComponentParams) -> LowRankCov:
    """The component scale matrix in its factored (never dense) form."""
    return LowRankCov(component.loadings, component.psi_diag)


def component_log_densities(x, model: MixtureModel) -> np.ndarray:
    """(n, G) matrix of per-component skew-t log densities."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty((xs.shape[0], model.g))
    for j, comp in enumerate(model.components):
        params = SkewTParams(
            comp.mu, assemble_covariance(comp), comp.alpha, comp.nu
        )
        out[:, j] = skew_t_log_density(xs, params)
    return out


def mixture_log_density(x, model: MixtureModel):
    """log f(x) = log sum_g pi_g zeta_g(x), guarded by log-sum-exp."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    log_dens = component_log_densities(arr, model)
    weighted = log_dens + np.log([c.pi for c in model.components])
    top = np.max(weighted, axis=1)
    out = top + np.log(np.sum(np.exp(weighted - top[:, None]), axis=1))
    return float(out[0]) if single else out


def count_free_params(
    constraint: ConstraintId, p: int, q: int, g: int
) -> tuple[int, int]:
    """Free-parameter counts: (covariance block, total).

    The covariance block counts loadings, error variances, skewness vectors
    and degrees of freedom from first principles; the total adds mixing
    proportions and means.  Loadings contribute pq - q(q-1)/2 per distinct
    matrix (rotation invariance removes q(q-1)/2).
    """
    if g < 1 or q < 1 or p < 1 or q >= p:
        raise DomainError("need g >= 1 and 1 <= q < p")
    loadings = p * q - q * (q - 1) // 2
    if not constraint.loading_constrained:
        loadings *= g
    if constraint.isotropic:
        error = 1 if constraint.error_constrained else g
    else:
        error = p if constraint.error_constrained else g * p
    covariance_count = loadings + error + g * p + g
    total_rho = (g - 1) + g * p + covariance_count
    return covariance_count, total_rho
