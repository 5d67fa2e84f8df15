"""One versioned configuration document for the whole pipeline.

Unknown keys are rejected (with their path) rather than ignored, and every
run stamps its resolved configuration into the output directory so results
are reproducible from the artifacts alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import DataError

CONFIG_VERSION = 1


@dataclass
class PreprocessConfig:
    cutoff_hz: float = 18.0
    order: int = 3
    mode: str = "zero_phase"
    baseline_ms: list[float] = field(default_factory=lambda: [200.0, 600.0])
    flat_run_ms: float = 50.0
    excursion_sigma: float = 6.0


@dataclass
class SegmentConfig:
    window_s: float = 5.0
    stride_s: float = 1.0


@dataclass
class FeaturesConfig:
    # 0 = population std for SDNN (and group stats stay sample-std); the
    # paper wording reads as dispersion, hence population by default.
    hrv_ddof: int = 0
    # numeric encoding of the sex field for model rows and correlations
    sex_encoding: dict[str, float] = field(
        default_factory=lambda: {"male": 1.0, "female": 0.0}
    )


@dataclass
class SplitConfig:
    grouping: str = "by_row"
    k: int = 5


@dataclass
class ModelsConfig:
    # grid documents per model kind: list of explicit points, or a
    # field -> values mapping expanded as a cross product
    grids: dict[str, Any] = field(
        default_factory=lambda: {
            "linear": [{}],
            "ridge": {"ridge_lambda": [0.1, 1.0, 10.0]},
            "tree": {"tree_max_depth": [8, None], "tree_min_leaf": [2]},
            "forest": [
                {"forest_n_trees": 100, "forest_max_features": 7, "tree_min_leaf": 2}
            ],
        }
    )


@dataclass
class FinetuneConfig:
    policy: str = "forest-augment"
    k: int | None = None
    weight: float = 0.5
    iterations: int = 200


@dataclass
class ReportConfig:
    histogram_bin_years: float = 1.0
    correlation_method: str = "pearson"


@dataclass
class PipelineConfig:
    config_version: int = CONFIG_VERSION
    seed: int = 42
    sampling_rate_hz: float = 100.0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    delineate: dict[str, Any] = field(default_factory=dict)  # DelineatorConfig overrides
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    report: ReportConfig = field(default_factory=ReportConfig)


_SECTION_TYPES = {
    "preprocess": PreprocessConfig,
    "segment": SegmentConfig,
    "features": FeaturesConfig,
    "split": SplitConfig,
    "models": ModelsConfig,
    "finetune": FinetuneConfig,
    "report": ReportConfig,
}


def _build_section(cls, doc: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise DataError(f"unknown config key(s) at {path}: {sorted(unknown)}")
    return cls(**doc)


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise DataError("config document must be a JSON object")
    doc = dict(doc)
    version = doc.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise DataError(f"unsupported config_version {version!r}")
    cfg = PipelineConfig()
    for key in list(doc):
        if key in ("seed", "sampling_rate_hz"):
            setattr(cfg, key, doc.pop(key))
        elif key == "delineate":
            sub = doc.pop(key)
            if not isinstance(sub, dict):
                raise DataError("config key 'delineate' must be an object")
            from .delineate import DelineatorConfig

            names = {f.name for f in dataclasses.fields(DelineatorConfig)}
            unknown = set(sub) - names
            if unknown:
                raise DataError(f"unknown config key(s) at delineate: {sorted(unknown)}")
            cfg.delineate = sub
        elif key in _SECTION_TYPES:
            sub = doc.pop(key)
            if not isinstance(sub, dict):
                raise DataError(f"config key {key!r} must be an object")
            setattr(cfg, key, _build_section(_SECTION_TYPES[key], sub, key))
    if doc:
        raise DataError(f"unknown config key(s): {sorted(doc)}")
    return cfg


def config_to_dict(cfg: PipelineConfig) -> dict:
    out = dataclasses.asdict(cfg)
    return out


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(doc)


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(canonical_json(config_to_dict(cfg)).encode()).hexdigest()


def write_json(doc: Any, path: Path | str) -> None:
    """Canonical JSON writer: byte-identical for equal documents."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(doc))
        fh.write("\n")
