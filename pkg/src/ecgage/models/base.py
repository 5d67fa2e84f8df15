"""Model specs, trained-model containers, and exact JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import DataError

KINDS = ("linear", "ridge", "tree", "forest")

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "forest"
    ridge_lambda: float = 0.0
    tree_max_depth: int | None = None
    tree_min_leaf: int = 2
    forest_n_trees: int = 200
    forest_max_features: int = 7
    forest_bootstrap: bool = True
    seed: int = 0

    def validate(self, n_features: int | None = None) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown model kind {self.kind!r}")
        if self.ridge_lambda < 0:
            raise DataError("ridge_lambda must be nonnegative")
        if self.tree_max_depth is not None and self.tree_max_depth < 1:
            raise DataError("tree_max_depth must be positive or None")
        if self.tree_min_leaf < 1:
            raise DataError("tree_min_leaf must be positive")
        if self.forest_n_trees < 1:
            raise DataError("forest_n_trees must be positive")
        if self.forest_max_features < 1:
            raise DataError("forest_max_features must be positive")
        if n_features is not None and self.forest_max_features > n_features:
            raise DataError(
                f"forest_max_features ({self.forest_max_features}) exceeds "
                f"feature count ({n_features})"
            )

    def with_(self, **kwargs) -> "ModelSpec":
        return replace(self, **kwargs)


@dataclass
class LinearParams:
    weights: np.ndarray  # in standardized feature space
    intercept: float
    feature_means: np.ndarray
    feature_stds: np.ndarray


@dataclass
class TreeParams:
    """Flat array encoding; index -1 marks a leaf in feature/children."""

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64, node mean (prediction at leaves)


@dataclass
class ForestParams:
    """Weighted groups of trees; a plain forest is one group of weight 1."""

    groups: list[tuple[float, list[TreeParams]]]


@dataclass
class TrainedModel:
    spec: ModelSpec
    feature_columns: list[str]
    params: LinearParams | TreeParams | ForestParams
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Prediction


def predict_tree(tree: TreeParams, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=np.float64)
    stack = [(0, np.arange(len(X)))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        f = tree.feature[node]
        if f < 0:
            out[rows] = tree.value[node]
            continue
        go_left = X[rows, f] <= tree.threshold[node]
        stack.append((tree.left[node], rows[go_left]))
        stack.append((tree.right[node], rows[~go_left]))
    return out


def predict(model: TrainedModel, X, columns: list[str] | None = None) -> np.ndarray:
    """Pure function of (parameters, rows); raises on column mismatch."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(0, len(model.feature_columns)) if X.size == 0 else X.reshape(1, -1)
    if X.size and X.shape[1] != len(model.feature_columns):
        raise DataError(
            f"expected {len(model.feature_columns)} feature columns, got {X.shape[1]}"
        )
    if columns is not None and list(columns) != list(model.feature_columns):
        raise DataError(
            "feature column order mismatch: model was trained on "
            f"{model.feature_columns}, got {list(columns)}"
        )
    if len(X) == 0:
        return np.empty(0, dtype=np.float64)
    p = model.params
    if isinstance(p, LinearParams):
        Xs = (X - p.feature_means) / p.feature_stds
        return Xs @ p.weights + p.intercept
    if isinstance(p, TreeParams):
        return predict_tree(p, X)
    if isinstance(p, ForestParams):
        total = np.zeros(len(X), dtype=np.float64)
        for weight, trees in p.groups:
            group = np.zeros(len(X), dtype=np.float64)
            for t in trees:
                group += predict_tree(t, X)
            total += weight * (group / len(trees))
        return total
    raise DataError(f"unknown parameter type {type(p).__name__}")


# ---------------------------------------------------------------------------
# Serialization (versioned JSON; floats round-trip exactly via repr)


def _spec_to_dict(spec: ModelSpec) -> dict:
    return asdict(spec)


def _spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(**d)


def _tree_to_dict(t: TreeParams) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
    }


def _tree_from_dict(d: dict) -> TreeParams:
    return TreeParams(
        feature=np.asarray(d["feature"], dtype=np.int32),
        threshold=np.asarray(d["threshold"], dtype=np.float64),
        left=np.asarray(d["left"], dtype=np.int32),
        right=np.asarray(d["right"], dtype=np.int32),
        value=np.asarray(d["value"], dtype=np.float64),
    )


def model_to_dict(model: TrainedModel) -> dict:
    p = model.params
    if isinstance(p, LinearParams):
        params = {
            "type": "linear",
            "weights": p.weights.tolist(),
            "intercept": p.intercept,
            "feature_means": p.feature_means.tolist(),
            "feature_stds": p.feature_stds.tolist(),
        }
    elif isinstance(p, TreeParams):
        params = {"type": "tree", "tree": _tree_to_dict(p)}
    elif isinstance(p, ForestParams):
        params = {
            "type": "forest",
            "groups": [
                {"weight": w, "trees": [_tree_to_dict(t) for t in trees]}
                for w, trees in p.groups
            ],
        }
    else:
        raise DataError(f"unknown parameter type {type(p).__name__}")
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "spec": _spec_to_dict(model.spec),
        "feature_columns": list(model.feature_columns),
        "parameters": params,
        "provenance": model.provenance,
    }


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format_version {doc.get('format_version')!r}")
    params_doc = doc["parameters"]
    kind = params_doc.get("type")
    if kind == "linear":
        params = LinearParams(
            weights=np.asarray(params_doc["weights"], dtype=np.float64),
            intercept=float(params_doc["intercept"]),
            feature_means=np.asarray(params_doc["feature_means"], dtype=np.float64),
            feature_stds=np.asarray(params_doc["feature_stds"], dtype=np.float64),
        )
    elif kind == "tree":
        params = _tree_from_dict(params_doc["tree"])
    elif kind == "forest":
        params = ForestParams(
            groups=[
                (float(g["weight"]), [_tree_from_dict(t) for t in g["trees"]])
                for g in params_doc["groups"]
            ]
        )
    else:
        raise DataError(f"unknown parameter type {kind!r}")
    return TrainedModel(
        spec=_spec_from_dict(doc["spec"]),
        feature_columns=list(doc["feature_columns"]),
        params=params,
        provenance=doc.get("provenance", {}),
    )


def save_model(model: TrainedModel, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path: Path | str) -> TrainedModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    return model_from_dict(doc)


def standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Training-set standardization statistics; zero-variance columns get
    unit scale so they standardize to exactly zero."""
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    return means, stds
