"""Feature-based regressors built from first principles on numpy.

Four model kinds: ordinary least squares, ridge, CART regression tree,
and a bagged random forest, plus grid search and a pretrain/fine-tune
harness.  Every stochastic choice flows from a counter-based stream keyed
by (seed, tree index), so fits are bit-reproducible at any parallelism.
"""

from .base import ModelSpec, TrainedModel, load_model, predict, save_model
from .forest import fit_forest
from .linear import fit_linear, fit_ridge
from .search import GridSearchResult, expand_grid, grid_search
from .tree import fit_tree
from .finetune import (
    FinetunePolicy,
    derived_finetune_seed,
    finetune_model,
    parse_policy,
    pretrain_finetune,
)

__all__ = [
    "ModelSpec",
    "TrainedModel",
    "predict",
    "save_model",
    "load_model",
    "fit_linear",
    "fit_ridge",
    "fit_tree",
    "fit_forest",
    "fit_model",
    "grid_search",
    "expand_grid",
    "GridSearchResult",
    "FinetunePolicy",
    "parse_policy",
    "pretrain_finetune",
    "finetune_model",
    "derived_finetune_seed",
]


def fit_model(spec: ModelSpec, X, y, columns=None) -> TrainedModel:
    """Dispatch on spec.kind; the single entry point the pipeline uses."""
    from .base import KINDS

    if spec.kind not in KINDS:
        raise ValueError(f"unknown model kind {spec.kind!r}")
    if spec.kind == "linear":
        return fit_linear(X, y, columns=columns, spec=spec)
    if spec.kind == "ridge":
        return fit_ridge(X, y, spec.ridge_lambda, columns=columns, spec=spec)
    if spec.kind == "tree":
        return fit_tree(
            X,
            y,
            max_depth=spec.tree_max_depth,
            min_leaf=spec.tree_min_leaf,
            seed=spec.seed,
            columns=columns,
            spec=spec,
        )
    return fit_forest(X, y, spec, columns=columns)
