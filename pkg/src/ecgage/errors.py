"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4.
"""


class EcgAgeError(Exception):
    """Base class for pipeline errors."""


class DataError(EcgAgeError):
    """Malformed, missing, or inconsistent input data."""


class NumericError(EcgAgeError):
    """A computation cannot proceed (zero variance, degenerate config, ...)."""
