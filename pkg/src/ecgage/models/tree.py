"""CART regression tree: greedy binary splits minimizing child SSE.

Candidate thresholds are midpoints between consecutive distinct sorted
feature values; both children must keep at least min_leaf rows.  Ties are
broken by lowest feature index, then lowest threshold, so fits are
platform-independent.  When a node samples a feature subset (random
forest), the subset is drawn from the tree's own stream in depth-first
node order, which pins the consumption order at any parallelism.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .base import ModelSpec, TrainedModel, TreeParams

#: Split SSEs within this relative tolerance of the minimum count as tied.
#: Float ties are path-dependent (the same partition reached through two
#: features can differ by an ulp), so the lowest-feature/lowest-threshold
#: rule is defined over this tolerance band.
TIE_RTOL = 1e-9


def _best_split(X, y, idx, feature_ids, min_leaf):
    """Best (sse, feature, threshold): minimum total child SSE, ties going
    to the lowest feature index, then the lowest threshold."""
    n = len(idx)
    per_feature = []
    global_min = np.inf
    for f in feature_ids:
        xv = X[idx, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        ys = y[idx][order]
        # a split after prefix length i is allowed where the value actually
        # changes, both sides meet min_leaf, and the midpoint stays strictly
        # below the right value (so the <= predicate reproduces it)
        change = xs[1:] > xs[:-1]
        pos = np.nonzero(change)[0] + 1
        pos = pos[(pos >= min_leaf) & (n - pos >= min_leaf)]
        if pos.size == 0:
            continue
        thr = 0.5 * (xs[pos - 1] + xs[pos])
        valid = thr < xs[pos]
        pos, thr = pos[valid], thr[valid]
        if pos.size == 0:
            continue
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        left_n = pos.astype(np.float64)
        left_sum = csum[pos - 1]
        left_sq = csq[pos - 1]
        right_n = n - left_n
        sse = (
            left_sq
            - left_sum**2 / left_n
            + (csq[-1] - left_sq)
            - (csum[-1] - left_sum) ** 2 / right_n
        )
        fmin = float(sse.min())
        if fmin < global_min:
            global_min = fmin
        per_feature.append((f, thr, sse))
    if not per_feature:
        return None
    cut = global_min + TIE_RTOL * max(abs(global_min), 1.0)
    for f, thr, sse in per_feature:  # feature_ids are ascending
        tied = np.nonzero(sse <= cut)[0]
        if tied.size:
            j = int(tied[0])  # thresholds ascend with position
            return (float(sse[j]), f, float(thr[j]))
    return None


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int | None,
    min_leaf: int,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> TreeParams:
    n_features = X.shape[1]
    sample_features = max_features is not None and max_features < n_features

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node(mean: float) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(mean)
        return len(feature) - 1

    root = new_node(float(y.mean()))
    # depth-first, left child first: fixes node numbering and rng order
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        mean = float(ys.mean())
        value[node] = mean
        if max_depth is not None and depth >= max_depth:
            continue
        if len(idx) < 2 * min_leaf:
            continue
        sse_parent = float(((ys - mean) ** 2).sum())
        if sse_parent <= 0.0:
            continue
        if sample_features:
            chosen = np.sort(rng.choice(n_features, size=max_features, replace=False))
        else:
            chosen = np.arange(n_features)
        best = _best_split(X, y, idx, chosen, min_leaf)
        if best is None or best[0] >= sse_parent:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        li = new_node(0.0)
        ri = new_node(0.0)
        feature[node] = f
        threshold[node] = thr
        left[node] = li
        right[node] = ri
        # push right first so the left subtree is processed (and numbered,
        # and consumes rng) before the right subtree
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))

    return TreeParams(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


def fit_tree(
    X,
    y,
    max_depth: int | None = None,
    min_leaf: int = 1,
    seed: int = 0,
    columns=None,
    spec: ModelSpec | None = None,
) -> TrainedModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("X must be 2-d with one target per row")
    if len(X) == 0:
        raise DataError("cannot fit a tree on zero rows")
    if min_leaf < 1:
        raise DataError("min_leaf must be positive")
    if columns is None:
        columns = [f"x{i}" for i in range(X.shape[1])]
    params = build_tree(X, y, max_depth, min_leaf)
    spec = (spec or ModelSpec(kind="tree")).with_(
        kind="tree", tree_max_depth=max_depth, tree_min_leaf=min_leaf, seed=seed
    )
    return TrainedModel(spec=spec, feature_columns=list(columns), params=params)
