"""Pretrain on one feature-compatible dataset, fine-tune on another.

Forest policy (tree augmentation): keep the pretrained trees, train k new
trees on the fine-tune set, and predict the w-weighted mean of the two
groups.  w = 0 reproduces the pretrained model, w = 1 reproduces a fresh
forest of k trees on the fine-tune set.  Linear/ridge policy (warm start):
the pretrained coefficients initialize a finite-budget iterative
least-squares refit on the fine-tune set.  Both mechanisms are artifact
definitions; see README for the exact semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .base import ForestParams, LinearParams, ModelSpec, TrainedModel
from .forest import fit_forest
from .linear import warm_start_refit


@dataclass(frozen=True)
class FinetunePolicy:
    name: str = "forest-augment"  # or "warm-start"
    k: int | None = None  # new trees; default n_trees // 2
    weight: float = 0.5  # weight on the new trees
    iterations: int = 200  # warm-start gradient steps
    seed: int | None = None  # sub-seed for the new trees; derived if None


def parse_policy(text: str) -> FinetunePolicy:
    """Parse CLI syntax like ``forest-augment:k=100,w=0.5``."""
    name, _, rest = text.partition(":")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key == "k":
                kwargs["k"] = int(value)
            elif key == "w":
                kwargs["weight"] = float(value)
            elif key == "iterations":
                kwargs["iterations"] = int(value)
            elif key == "seed":
                kwargs["seed"] = int(value)
            else:
                raise DataError(f"unknown policy option {key!r}")
    if name not in ("forest-augment", "warm-start"):
        raise DataError(f"unknown fine-tune policy {name!r}")
    return FinetunePolicy(name=name, **kwargs)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def derived_finetune_seed(spec: ModelSpec) -> int:
    """Deterministic sub-seed for the fine-tune trees of a given model."""
    return _splitmix64(spec.seed ^ _splitmix64(spec.forest_n_trees))


def intersect_columns(
    a_cols: list[str], b_cols: list[str]
) -> tuple[list[str], list[str], list[str]]:
    """Shared schema in a's order, plus what each side drops."""
    shared = [c for c in a_cols if c in set(b_cols)]
    if not shared:
        raise DataError("pretrain and fine-tune datasets share no feature columns")
    dropped_a = [c for c in a_cols if c not in set(shared)]
    dropped_b = [c for c in b_cols if c not in set(shared)]
    return shared, dropped_a, dropped_b


def _project(X: np.ndarray, cols: list[str], keep: list[str]) -> np.ndarray:
    pos = [cols.index(c) for c in keep]
    return np.asarray(X, dtype=np.float64)[:, pos]


def finetune_model(
    pretrained: TrainedModel,
    X,
    y,
    columns: list[str],
    policy: FinetunePolicy | None = None,
) -> TrainedModel:
    """Fine-tune an already-fitted model on new rows.

    The fine-tune data must cover the model's feature columns; extra
    columns are dropped.
    """
    policy = policy or FinetunePolicy()
    columns = list(columns)
    missing = [c for c in pretrained.feature_columns if c not in columns]
    if missing:
        raise DataError(
            f"fine-tune data lacks model feature column(s): {missing}"
        )
    X = _project(np.asarray(X, dtype=np.float64), columns, pretrained.feature_columns)
    y = np.asarray(y, dtype=np.float64)

    if isinstance(pretrained.params, ForestParams):
        if policy.name != "forest-augment":
            raise DataError(f"policy {policy.name!r} does not apply to forests")
        k = policy.k if policy.k is not None else max(1, pretrained.spec.forest_n_trees // 2)
        sub_seed = policy.seed if policy.seed is not None else derived_finetune_seed(pretrained.spec)
        new_spec = pretrained.spec.with_(forest_n_trees=k, seed=sub_seed)
        new_forest = fit_forest(X, y, new_spec, columns=pretrained.feature_columns)
        w = policy.weight
        if not 0.0 <= w <= 1.0:
            raise DataError("fine-tune weight must lie in [0, 1]")
        groups: list[tuple[float, list]] = []
        if w < 1.0:
            for gw, trees in pretrained.params.groups:
                groups.append((gw * (1.0 - w), trees))
        if w > 0.0:
            groups.append((w, new_forest.params.groups[0][1]))
        return TrainedModel(
            spec=pretrained.spec,
            feature_columns=list(pretrained.feature_columns),
            params=ForestParams(groups=groups),
            provenance={
                **pretrained.provenance,
                "finetune": {"policy": policy.name, "k": k, "weight": w, "seed": sub_seed},
            },
        )

    if isinstance(pretrained.params, LinearParams):
        if policy.name != "warm-start":
            raise DataError(f"policy {policy.name!r} does not apply to linear models")
        lam = pretrained.spec.ridge_lambda if pretrained.spec.kind == "ridge" else 0.0
        params = warm_start_refit(
            pretrained.params, X, y, ridge_lambda=lam, iterations=policy.iterations
        )
        return TrainedModel(
            spec=pretrained.spec,
            feature_columns=list(pretrained.feature_columns),
            params=params,
            provenance={
                **pretrained.provenance,
                "finetune": {"policy": policy.name, "iterations": policy.iterations},
            },
        )
    raise DataError("decision trees have no fine-tune policy; use a forest")


def pretrain_finetune(
    model_kind: str,
    pretrain_set: tuple[np.ndarray, np.ndarray, list[str]],
    finetune_set: tuple[np.ndarray, np.ndarray, list[str]],
    policy: FinetunePolicy | None = None,
    base_spec: ModelSpec | None = None,
) -> TrainedModel:
    """Fit on the pretrain set, then fine-tune: the full two-stage harness.

    Feature columns absent from either side are dropped from both before
    the pretrain fit; the drop lists land in the model provenance.
    """
    from . import fit_model

    policy = policy or FinetunePolicy(
        name="forest-augment" if model_kind == "forest" else "warm-start"
    )
    Xp, yp, cols_p = pretrain_set
    Xf, yf, cols_f = finetune_set
    shared, dropped_p, dropped_f = intersect_columns(list(cols_p), list(cols_f))
    Xp = _project(Xp, list(cols_p), shared)
    Xf = _project(Xf, list(cols_f), shared)

    spec = (base_spec or ModelSpec()).with_(kind=model_kind)
    pretrained = fit_model(spec, Xp, yp, columns=shared)
    pretrained.provenance["schema"] = {
        "shared_columns": shared,
        "dropped_from_pretrain": dropped_p,
        "dropped_from_finetune": dropped_f,
    }
    return finetune_model(pretrained, Xf, yf, shared, policy=policy)
