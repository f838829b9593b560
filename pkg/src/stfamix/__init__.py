"""Model-based clustering with parsimonious mixtures of skew-t factor
analyzers: eight constrained covariance models fitted by AECM, selected by
BIC, validated by the adjusted Rand index."""

__version__ = "0.1.0"

from .aecm import FitConfig, FitReport, e_step, fit, initialize
from .distributions import (
    GhParams,
    GigParams,
    LowRankCov,
    SkewTParams,
    gh_log_density,
    gig_expectations,
    gig_log_density,
    sample_skew_t,
    skew_t_log_density,
    woodbury_inverse,
)
from .errors import (
    DataError,
    DecompositionError,
    DomainError,
    FitFailureError,
    NumericalError,
)
from .model import (
    ALL_CONSTRAINTS,
    ComponentParams,
    ConstraintId,
    MixtureModel,
    assemble_covariance,
    count_free_params,
    mixture_log_density,
)
from .selection import (
    GridResult,
    GridSpec,
    adjusted_rand_index,
    ari_from_contingency,
    bic,
    confusion_table,
    grid_search,
)

__all__ = [
    "__version__",
    "FitConfig",
    "FitReport",
    "fit",
    "initialize",
    "e_step",
    "GigParams",
    "GhParams",
    "SkewTParams",
    "LowRankCov",
    "gig_log_density",
    "gig_expectations",
    "gh_log_density",
    "skew_t_log_density",
    "sample_skew_t",
    "woodbury_inverse",
    "ConstraintId",
    "ALL_CONSTRAINTS",
    "ComponentParams",
    "MixtureModel",
    "mixture_log_density",
    "count_free_params",
    "assemble_covariance",
    "GridSpec",
    "GridResult",
    "grid_search",
    "bic",
    "adjusted_rand_index",
    "ari_from_contingency",
    "confusion_table",
    "DomainError",
    "DecompositionError",
    "NumericalError",
    "FitFailureError",
    "DataError",
]
