"""Model selection over (G, q, constraint) triples and external validation.

The grid search fits every requested configuration, ranks converged (or at
least monotone) fits by BIC, and reports failures without letting them
poison the ranking.  Classification agreement is measured by the
chance-corrected Rand index computed from the contingency table.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .aecm import FitConfig, FitReport, fit
from .errors import DomainError, FitFailureError, NumericalError
from .model import ALL_CONSTRAINTS, ConstraintId

__all__ = [
    "GridSpec",
    "GridEntry",
    "GridResult",
    "bic",
    "grid_search",
    "fit_seed",
    "adjusted_rand_index",
    "ari_from_contingency",
    "confusion_table",
]


def bic(loglik: float, rho: int, n: int) -> float:
    """Bayesian information criterion, 2 l - rho log n; larger is better."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return 2.0 * loglik - rho * np.log(n)


@dataclass(frozen=True)
class GridSpec:
    """Search space: component counts, factor counts and covariance models."""

    g_values: tuple[int, ...]
    q_values: tuple[int, ...]
    constraints: tuple[ConstraintId, ...] = ALL_CONSTRAINTS
    config: FitConfig = FitConfig()

    def __post_init__(self):
        g_values = tuple(sorted(set(int(g) for g in self.g_values)))
        q_values = tuple(sorted(set(int(q) for q in self.q_values)))
        constraints = tuple(self.constraints)
        if not g_values or not q_values or not constraints:
            raise DomainError("grid axes must be non-empty")
        if min(g_values) < 1 or min(q_values) < 1:
            raise DomainError("grid values must be positive")
        object.__setattr__(self, "g_values", g_values)
        object.__setattr__(self, "q_values", q_values)
        object.__setattr__(self, "constraints", constraints)


@dataclass(frozen=True)
class GridEntry:
    """One grid cell: configuration, scores, and the fit when it succeeded."""

    g: int
    q: int
    constraint: ConstraintId
    bic: float
    loglik: float
    converged: bool
    failure_reason: str | None = None
    report: FitReport | None = None

    @property
    def eligible(self) -> bool:
        if self.failure_reason is not None or self.report is None:
            return False
        return self.converged or self.report.ascending


@dataclass(frozen=True)
class GridResult:
    """All grid entries plus a reference to the winning one."""

    entries: tuple[GridEntry, ...]
    best: GridEntry


def fit_seed(seed: int, g: int, q: int, constraint: ConstraintId) -> int:
    """Stable per-configuration seed so grid order never matters."""
    key = f"{seed}|{g}|{q}|{constraint.id}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")


def _select_best(entries: list[GridEntry]) -> GridEntry:
    candidates = [e for e in entries if e.eligible]
    if not candidates:
        raise FitFailureError("every fit in the grid failed")
    top = max(e.bic for e in candidates)
    # BIC ties (within 1e-9) break toward parsimony, deterministically.
    tied = [e for e in candidates if e.bic >= top - 1e-9]
    return min(tied, key=lambda e: (_rho_of(e), e.g, e.q, e.constraint.id))


def _rho_of(entry: GridEntry) -> int:
    from .model import count_free_params

    p = entry.report.model.p
    return count_free_params(entry.constraint, p, entry.q, entry.g)[1]


def grid_search(data: np.ndarray, spec: GridSpec) -> GridResult:
    """Fit every (G, q, constraint) triple and rank by BIC.

    Failed fits stay in the entry list with their reason but are excluded
    from the best-model choice.  Each fit is seeded independently by a hash
    of (seed, g, q, constraint), so results are reproducible and independent
    of evaluation order.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    entries: list[GridEntry] = []
    for g in spec.g_values:
        for q in spec.q_values:
            if q >= data.shape[1]:
                raise DomainError("q must be smaller than the data dimension")
            for constraint in spec.constraints:
                config = replace(
                    spec.config,
                    seed=fit_seed(spec.config.seed, g, q, constraint),
                )
                try:
                    report = fit(data, g, q, constraint, config)
                except (FitFailureError, NumericalError) as exc:
                    entries.append(
                        GridEntry(
                            g=g,
                            q=q,
                            constraint=constraint,
                            bic=float("-inf"),
                            loglik=float("-inf"),
                            converged=False,
                            failure_reason=str(exc),
                        )
                    )
                    continue
                entries.append(
                    GridEntry(
                        g=g,
                        q=q,
                        constraint=constraint,
                        bic=report.model.bic,
                        loglik=report.model.loglik,
                        converged=report.converged,
                        report=report,
                    )
                )
    return GridResult(entries=tuple(entries), best=_select_best(entries))


def confusion_table(true_labels, predicted_labels) -> np.ndarray:
    """Contingency counts with true classes as rows, clusters as columns."""
    truth = np.asarray(true_labels).ravel()
    pred = np.asarray(predicted_labels).ravel()
    if truth.shape != pred.shape:
        raise DomainError("label vectors must have equal length")
    row_values, row_idx = np.unique(truth, return_inverse=True)
    col_values, col_idx = np.unique(pred, return_inverse=True)
    table = np.zeros((row_values.size, col_values.size), dtype=int)
    np.add.at(table, (row_idx, col_idx), 1)
    return table


def ari_from_contingency(table: np.ndarray) -> float:
    """Chance-corrected Rand index from a contingency table."""
    table = np.asarray(table, dtype=float)

    def comb2(values):
        return np.sum(values * (values - 1.0) / 2.0)

    n = table.sum()
    if n < 2:
        return 1.0
    together = comb2(table)
    rows = comb2(table.sum(axis=1))
    cols = comb2(table.sum(axis=0))
    expected = rows * cols / (n * (n - 1.0) / 2.0)
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        return 1.0
    return float((together - expected) / (maximum - expected))


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Partition agreement: 1 is perfect, 0 is chance level."""
    return ari_from_contingency(confusion_table(labels_a, labels_b))
