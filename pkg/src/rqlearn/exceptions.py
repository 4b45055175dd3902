"""Exception types shared across the package."""


class RqlearnError(Exception):
    """Base class for all package-specific errors."""


class SingularDesignError(RqlearnError):
    """A (weighted) Gram matrix is numerically rank deficient.

    Carries an estimate of the condition number of the offending matrix.
    """

    def __init__(self, message: str, cond: float = float("inf")):
        super().__init__(f"{message} (condition estimate {cond:.3e})")
        self.cond = cond


class PositiveDefiniteError(SingularDesignError):
    """A treatment-residual Gram matrix is not invertible even after jitter."""


class DegenerateLabelsError(RqlearnError):
    """A binary-response fit was attempted with only one class present."""


class FoldClassError(DegenerateLabelsError):
    """A cross-fitting training split is missing one treatment class."""

    def __init__(self, fold: int, nuisance: str):
        super().__init__(
            f"training complement of fold {fold} has a single class for {nuisance!r}"
        )
        self.fold = fold
        self.nuisance = nuisance


class DataFormatError(RqlearnError):
    """Malformed input data (CSV ingestion, schema mismatch, bad codes)."""


class ConfigError(RqlearnError):
    """Invalid experiment or analysis configuration."""
