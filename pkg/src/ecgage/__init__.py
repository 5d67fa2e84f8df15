"""Single-lead ECG vascular-age pipeline: preprocessing, delineation,
feature extraction, regression models, and evaluation reports."""

__version__ = "0.1.0"

from .errors import DataError, NumericError

__all__ = ["DataError", "NumericError", "__version__"]
