"""Exception and warning types raised across the package."""

from __future__ import annotations


class ParametricDROError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ParametricDROError, ValueError):
    """Non-finite, out-of-domain, or otherwise malformed input."""


class DimensionError(InvalidInputError):
    """Array shapes that cannot be combined."""


class BoundaryMeanError(ParametricDROError, ValueError):
    """A mean parameter on the boundary of the mean domain was inverted."""


class ConsistencyError(ParametricDROError, ArithmeticError):
    """An internal numerical identity failed beyond its tolerance."""


class ConfigError(ParametricDROError, ValueError):
    """Invalid configuration value."""


class RadiiInfeasibleError(ParametricDROError, ValueError):
    """Marginal radius smaller than the p-weighted conditional radii."""


class RootFindingError(ParametricDROError, RuntimeError):
    """A one-dimensional root could not be bracketed or polished."""


class ConvergenceError(ParametricDROError, RuntimeError):
    """An iterative solve did not reach its tolerance."""


class DataLoadError(ParametricDROError, ValueError):
    """A CSV cell could not be parsed.

    Parameters
    ----------
    message : str
    row : int or None
        1-based data row (header excluded).
    column : str or None
        Column name.
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SchemaError(ParametricDROError, ValueError):
    """Dataset does not match the declared schema or family."""


class UndefinedMetricError(ParametricDROError, ValueError):
    """Metric undefined for the given labels (e.g. AUC with one class)."""


class UnboundedMLEWarning(RuntimeWarning):
    """Likelihood appears unbounded: the MLE does not exist for this data."""


class NotConvergedWarning(RuntimeWarning):
    """Iteration cap reached before the gradient tolerance."""


class TailBoundWarning(RuntimeWarning):
    """Truncated series may have a non-negligible tail."""
