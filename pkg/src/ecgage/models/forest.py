"""Bagged random forest over the CART tree.

Each tree draws a bootstrap sample (with replacement, same size) and
samples forest_max_features features per split, all from its own Philox
stream keyed by (seed, tree_index).  Streams are independent, so training
order and thread count cannot change the result; prediction is the mean
over trees.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import DataError
from .base import ForestParams, ModelSpec, TrainedModel, TreeParams
from .tree import build_tree


def tree_stream(seed: int, tree_index: int) -> np.random.Generator:
    """Counter-based per-tree stream; the key is literally (seed, index)."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(tree_index)])
    return np.random.Generator(np.random.Philox(key=key))


def _fit_one_tree(X, y, spec: ModelSpec, tree_index: int) -> TreeParams:
    rng = tree_stream(spec.seed, tree_index)
    if spec.forest_bootstrap:
        rows = rng.integers(0, len(y), size=len(y))
        Xb, yb = X[rows], y[rows]
    else:
        Xb, yb = X, y
    max_features = min(spec.forest_max_features, X.shape[1])
    return build_tree(
        Xb,
        yb,
        max_depth=spec.tree_max_depth,
        min_leaf=spec.tree_min_leaf,
        max_features=max_features,
        rng=rng,
    )


def fit_forest(X, y, spec: ModelSpec, columns=None, n_jobs: int = 1) -> TrainedModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("X must be 2-d with one target per row")
    if len(X) == 0:
        raise DataError("cannot fit a forest on zero rows")
    spec = spec.with_(kind="forest")
    spec.validate(n_features=X.shape[1])
    if columns is None:
        columns = [f"x{i}" for i in range(X.shape[1])]

    indices = range(spec.forest_n_trees)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(lambda t: _fit_one_tree(X, y, spec, t), indices))
    else:
        trees = [_fit_one_tree(X, y, spec, t) for t in indices]

    return TrainedModel(
        spec=spec,
        feature_columns=list(columns),
        params=ForestParams(groups=[(1.0, trees)]),
    )
