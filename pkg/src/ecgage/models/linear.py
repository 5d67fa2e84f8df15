"""Ordinary least squares and ridge regression.

Both standardize predictors with training-set statistics (stored on the
model for inference) and keep the intercept unpenalized.  OLS solves via
an orthogonal decomposition (SVD-backed lstsq), which resolves rank
deficiency with the minimum-norm solution; ridge solves the equivalent
augmented least-squares system [X; sqrt(lambda) I].
"""

from __future__ import annotations

import warnings

import numpy as np

from ..errors import DataError
from .base import LinearParams, ModelSpec, TrainedModel, standardize_fit


def _prepare(X, y, columns):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("X must be 2-dimensional")
    if len(X) != len(y):
        raise DataError(f"X has {len(X)} rows but y has {len(y)}")
    if columns is None:
        columns = [f"x{i}" for i in range(X.shape[1])]
    elif len(columns) != X.shape[1]:
        raise DataError("column names do not match X width")
    return X, y, list(columns)


def fit_linear(X, y, columns=None, spec: ModelSpec | None = None) -> TrainedModel:
    X, y, columns = _prepare(X, y, columns)
    if len(X) < X.shape[1] + 1:
        warnings.warn(
            f"fewer rows ({len(X)}) than coefficients ({X.shape[1] + 1}); "
            "returning the minimum-norm solution",
            stacklevel=2,
        )
    means, stds = standardize_fit(X)
    Xs = (X - means) / stds
    design = np.column_stack([np.ones(len(Xs)), Xs])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    spec = (spec or ModelSpec(kind="linear")).with_(kind="linear")
    return TrainedModel(
        spec=spec,
        feature_columns=columns,
        params=LinearParams(
            weights=coef[1:], intercept=float(coef[0]), feature_means=means, feature_stds=stds
        ),
    )


def fit_ridge(X, y, ridge_lambda: float, columns=None, spec: ModelSpec | None = None) -> TrainedModel:
    """Minimize ||y - Xw - b||^2 + lambda ||w||^2 with b unpenalized."""
    if ridge_lambda < 0:
        raise DataError("ridge_lambda must be nonnegative")
    X, y, columns = _prepare(X, y, columns)
    means, stds = standardize_fit(X)
    Xs = (X - means) / stds
    y_mean = float(y.mean())
    yc = y - y_mean
    # Standardized columns have zero mean, so the intercept decouples and
    # equals mean(y); the weights solve the augmented system.
    p = Xs.shape[1]
    A = np.vstack([Xs, np.sqrt(ridge_lambda) * np.eye(p)])
    b = np.concatenate([yc, np.zeros(p)])
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    spec = (spec or ModelSpec(kind="ridge")).with_(kind="ridge", ridge_lambda=float(ridge_lambda))
    return TrainedModel(
        spec=spec,
        feature_columns=columns,
        params=LinearParams(
            weights=w, intercept=y_mean, feature_means=means, feature_stds=stds
        ),
    )


def warm_start_refit(
    params: LinearParams,
    X: np.ndarray,
    y: np.ndarray,
    ridge_lambda: float = 0.0,
    iterations: int = 200,
) -> LinearParams:
    """Iterative least squares on new data, started from prior coefficients.

    Plain gradient descent with a 1/L step on the (optionally ridge)
    objective in the new data's standardized space.  A finite iteration
    budget intentionally keeps the solution anchored to the prior;
    iterations -> infinity converges to the plain refit.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    means, stds = standardize_fit(X)
    Xs = (X - means) / stds
    n = len(Xs)

    # Map the prior coefficients from their own standardized space to raw
    # space, then into the new standardization.
    w_raw = params.weights / params.feature_stds
    b_raw = params.intercept - float(w_raw @ params.feature_means)
    w = w_raw * stds
    b = b_raw + float(w_raw @ means)

    lip = np.linalg.norm(Xs, 2) ** 2 / n + ridge_lambda / n + 1.0
    step = 1.0 / lip
    for _ in range(iterations):
        resid = Xs @ w + b - y
        grad_w = (Xs.T @ resid + ridge_lambda * w) / n
        grad_b = float(resid.mean())
        w = w - step * grad_w
        b = b - step * grad_b
    return LinearParams(weights=w, intercept=float(b), feature_means=means, feature_stds=stds)
