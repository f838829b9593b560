"""Exception hierarchy shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(ArithmeticError):
    """A numerical procedure degenerated beyond recovery."""


class DecompositionError(NumericalError):
    """A matrix factorization failed (non-positive-definite or singular input)."""


class FitFailureError(RuntimeError):
    """A model fit collapsed (empty component, degenerate geometry)."""


class DataError(ValueError):
    """Input data violates the expected file format or content rules."""
