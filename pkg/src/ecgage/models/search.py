"""Hyperparameter grid search over a validation split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .base import ModelSpec, TrainedModel, predict


@dataclass
class GridSearchResult:
    best_spec: ModelSpec
    best_model: TrainedModel
    best_score: float
    leaderboard: list[tuple[ModelSpec, float]]  # in grid order


def expand_grid(kind: str, grid: dict | list, seed: int = 0) -> list[ModelSpec]:
    """Turn a grid document into explicit specs.

    A list means explicit points; a mapping of field -> list of values
    means the cross product, expanded with the last field varying fastest,
    in the order the document lists them.
    """
    base = ModelSpec(kind=kind, seed=seed)
    if isinstance(grid, list):
        points = grid
    elif isinstance(grid, dict):
        points = [{}]
        for name, values in grid.items():
            if not isinstance(values, list):
                values = [values]
            points = [dict(p, **{name: v}) for p in points for v in values]
    else:
        raise DataError("grid must be a list of points or a field->values mapping")
    specs = []
    for point in points:
        unknown = set(point) - {f for f in ModelSpec.__dataclass_fields__}
        if unknown:
            raise DataError(f"unknown grid field(s): {sorted(unknown)}")
        specs.append(base.with_(**point))
    if not specs:
        raise DataError("empty hyperparameter grid")
    return specs


def grid_search(
    spec_grid: list[ModelSpec],
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    columns=None,
) -> GridSearchResult:
    """Fit every grid point on train, pick minimum validation MSE.

    Ties go to the earlier grid point; the full leaderboard is returned.
    """
    from . import fit_model  # local import to avoid a cycle

    if not spec_grid:
        raise DataError("empty hyperparameter grid")
    X_tr, y_tr = train
    X_val, y_val = val
    if len(X_val) == 0:
        raise DataError("validation split is empty")

    leaderboard = []
    best = None
    for spec in spec_grid:
        model = fit_model(spec, X_tr, y_tr, columns=columns)
        err = predict(model, X_val) - np.asarray(y_val, dtype=np.float64)
        score = float(np.mean(err**2))
        leaderboard.append((spec, score))
        if best is None or score < best[2]:
            best = (spec, model, score)
    return GridSearchResult(
        best_spec=best[0], best_model=best[1], best_score=best[2], leaderboard=leaderboard
    )
