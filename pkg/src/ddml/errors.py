"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
EstimationError (and subclasses) -> 4.
"""


class DdmlError(Exception):
    """Base class for all package errors."""


class ConfigError(DdmlError):
    """Invalid configuration: unknown keys, bad values, unusable fold counts."""


class DataError(DdmlError):
    """Invalid input data: missing columns, non-finite cells, role violations."""


class EstimationError(DdmlError):
    """Estimation failed in a way that is not a programming error."""


class DegenerateError(EstimationError):
    """An identification assumption is violated empirically, e.g. a
    residualized treatment with no variation or a weak constructed
    instrument."""


class ConvergenceError(EstimationError):
    """An iterative solver did not converge within its sweep budget."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations
