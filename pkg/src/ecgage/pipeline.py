"""Stage orchestration: ingest -> preprocess -> delineate -> features ->
train -> evaluate, with every intermediate persisted in the documented
formats.  ``run_pipeline`` chains the same stage functions the CLI
subcommands expose, so staged runs and one-shot runs produce identical
artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__, evaluate, features, ingest, models, preprocess, segment
from .config import PipelineConfig, config_hash, config_to_dict, write_json
from .delineate import (
    DelineatorConfig,
    FiducialSet,
    delineate_cycles,
    detect_r_peaks,
    read_fiducials_csv,
    write_fiducials_csv,
)
from .errors import DataError

MODEL_KINDS = ("linear", "ridge", "tree", "forest")

SCENARIOS = ("segmented", "unsegmented", "finetune")


def _filter_spec(cfg: PipelineConfig) -> preprocess.FilterSpec:
    return preprocess.FilterSpec(
        order=cfg.preprocess.order,
        cutoff_hz=cfg.preprocess.cutoff_hz,
        sampling_rate_hz=cfg.sampling_rate_hz,
    )


def _baseline_spec(cfg: PipelineConfig) -> preprocess.BaselineSpec:
    w1, w2 = cfg.preprocess.baseline_ms
    return preprocess.BaselineSpec(stage1_window_ms=w1, stage2_window_ms=w2)


def _anomaly_spec(cfg: PipelineConfig) -> preprocess.AnomalySpec:
    return preprocess.AnomalySpec(
        flat_run_ms=cfg.preprocess.flat_run_ms,
        excursion_sigma=cfg.preprocess.excursion_sigma,
    )


def delineator_config(cfg: PipelineConfig) -> DelineatorConfig:
    overrides = dict(cfg.delineate)
    if "baseline_window_ms" in overrides:
        overrides["baseline_window_ms"] = tuple(overrides["baseline_window_ms"])
    return DelineatorConfig(**overrides)


def dataset_hash(manifest: ingest.DatasetManifest) -> str:
    """Hash of manifest, metadata, and every recording, path-ordered."""
    h = hashlib.sha256()
    paths = [manifest.metadata_path] + sorted(e.recording for e in manifest.entries)
    for rel in paths:
        h.update(rel.encode())
        h.update(hashlib.sha256((manifest.root / rel).read_bytes()).digest())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Stage: preprocess


def preprocess_stage(
    data_root: Path | str, out_dir: Path | str, cfg: PipelineConfig
) -> list[str]:
    """Clean every recording in the manifest; emits the ingest CSV format
    plus a provenance JSON sidecar per subject.  Returns subject ids."""
    root = Path(data_root)
    out = Path(out_dir)
    manifest = ingest.load_manifest(root / "manifest.json")
    fspec, bspec = _filter_spec(cfg), _baseline_spec(cfg)
    sids = []
    for entry in manifest.entries:
        rec = ingest.load_recording(root / entry.recording, cfg.sampling_rate_hz)
        clean = preprocess.preprocess_recording(
            rec, fspec, bspec, mode=cfg.preprocess.mode
        )
        cleaned_rec = ingest.EcgRecording(
            subject_id=rec.subject_id,
            sampling_rate_hz=rec.sampling_rate_hz,
            samples=clean.samples,
            validity_mask=clean.validity_mask,
        )
        ingest.write_recording(cleaned_rec, out / f"{entry.subject_id}.csv")
        write_json(clean.provenance(), out / f"{entry.subject_id}.provenance.json")
        sids.append(entry.subject_id)
    return sids


def load_clean(
    clean_dir: Path | str,
    subject_id: str,
    cfg: PipelineConfig,
    raw: ingest.EcgRecording | None = None,
) -> preprocess.CleanRecording:
    clean_dir = Path(clean_dir)
    rec = ingest.load_recording(clean_dir / f"{subject_id}.csv", cfg.sampling_rate_hz)
    prov_path = clean_dir / f"{subject_id}.provenance.json"
    if not prov_path.is_file():
        raise DataError(f"provenance sidecar missing: {prov_path}")
    prov = json.loads(prov_path.read_text())
    return preprocess.CleanRecording(
        subject_id=subject_id,
        sampling_rate_hz=cfg.sampling_rate_hz,
        samples=rec.samples,
        validity_mask=rec.validity_mask,
        raw_samples=raw.samples if raw is not None else rec.samples,
        filter_spec=_filter_spec(cfg),
        baseline_spec=_baseline_spec(cfg),
        filter_mode=prov["filter"]["mode"],
        norm_mean=prov["normalization"]["mean"],
        norm_std=prov["normalization"]["std"],
    )


# ---------------------------------------------------------------------------
# Stage: delineate


def delineate_stage(
    clean_dir: Path | str, out_dir: Path | str, cfg: PipelineConfig
) -> None:
    clean_dir = Path(clean_dir)
    out = Path(out_dir)
    dcfg = delineator_config(cfg)
    for path in sorted(clean_dir.glob("*.csv")):
        sid = path.stem
        clean = load_clean(clean_dir, sid, cfg)
        peaks = detect_r_peaks(clean, dcfg)
        fids = delineate_cycles(clean, peaks, dcfg)
        write_fiducials_csv(fids, out / f"{sid}.csv")


# ---------------------------------------------------------------------------
# Stage: features


def _invalidate_cross_cycle(
    cycle_feats: list[features.EcgFeatures], kept: set[int]
) -> None:
    """Cross-cycle features (RR, PP, PT, QTc) need the next cycle usable."""
    for k in kept:
        if k + 1 not in kept:
            f = cycle_feats[k]
            f.rr_ms = f.pp_ms = f.pt_ms = f.qtc_ms = None


def subject_feature_aggregates(
    clean: preprocess.CleanRecording,
    fiducials: list[FiducialSet],
    cfg: PipelineConfig,
    scope: str,
) -> tuple[list[tuple[str, str, features.EcgFeatures]], dict]:
    """Excise anomalies, then aggregate features per segment or recording.

    Returns (subject_id, segment_id, aggregate) triples plus bookkeeping
    counts for the run report.
    """
    fs = clean.sampling_rate_hz
    excised, report = preprocess.excise_anomalies(clean, fiducials, _anomaly_spec(cfg))
    stats = {
        "total_cycles": report.total_cycles,
        "masked_cycles": report.masked_cycles,
        "unusable": report.unusable,
        "segments_excluded": 0,
        "scopes_dropped": 0,
    }
    if report.unusable:
        return [], stats
    mask = excised.validity_mask
    kept = {i for i, f in enumerate(fiducials) if mask[f.r_peak]}
    if len(kept) < 2:
        stats["scopes_dropped"] += 1
        return [], stats

    cycle_feats = features.interval_features(fiducials, fs)
    _invalidate_cross_cycle(cycle_feats, kept)
    ddof = cfg.features.hrv_ddof

    out = []
    if scope == "full":
        kept_sorted = sorted(kept)
        rr = [
            (fiducials[j + 1].r_peak - fiducials[j].r_peak) * 1000.0 / fs
            for j in kept_sorted
            if j + 1 in kept
        ]
        agg = features.aggregate([cycle_feats[j] for j in kept_sorted], rr, hrv_ddof=ddof)
        out.append((clean.subject_id, "full", agg))
    elif scope == "segmented":
        segs = segment.make_segments(
            clean.n_samples,
            fs,
            window_s=cfg.segment.window_s,
            stride_s=cfg.segment.stride_s,
            subject_id=clean.subject_id,
            mask=mask,
        )
        kept_fids = [fiducials[j] for j in sorted(kept)]
        kept_feats = [cycle_feats[j] for j in sorted(kept)]
        for seg in segs:
            if not seg.usable:
                stats["segments_excluded"] += 1
                continue
            agg = features.segment_features(kept_fids, kept_feats, seg, fs, hrv_ddof=ddof)
            if agg is None:
                stats["scopes_dropped"] += 1
                continue
            out.append((clean.subject_id, str(seg.segment_id), agg))
    else:
        raise DataError(f"unknown feature scope {scope!r}")
    return out, stats


def features_stage(
    data_root: Path | str,
    clean_dir: Path | str,
    fiducials_dir: Path | str,
    scope: str,
    cfg: PipelineConfig,
    out_csv: Path | str,
) -> dict:
    """Assemble the 21-predictor rows for one scope and write the CSV."""
    root = Path(data_root)
    manifest = ingest.load_manifest(root / "manifest.json")
    metadata = ingest.load_metadata(root / manifest.metadata_path)

    aggregates = []
    per_subject = {}
    for entry in manifest.entries:
        raw = ingest.load_recording(root / entry.recording, cfg.sampling_rate_hz)
        clean = load_clean(clean_dir, entry.subject_id, cfg, raw=raw)
        fids = read_fiducials_csv(Path(fiducials_dir) / f"{entry.subject_id}.csv")
        aggs, stats = subject_feature_aggregates(clean, fids, cfg, scope)
        aggregates.extend(aggs)
        per_subject[entry.subject_id] = stats

    rows, dropped = features.assemble_rows(
        aggregates, metadata, sex_encoding=cfg.features.sex_encoding
    )
    features.write_feature_csv(rows, out_csv)
    meta = {
        "scope": scope,
        "rows": len(rows),
        "rows_dropped_missing_predictor": dropped,
        "per_subject": per_subject,
    }
    write_json(meta, Path(str(out_csv) + ".meta.json"))
    return meta


# ---------------------------------------------------------------------------
# Scenario evaluation


def _xy(table: features.FeatureTable, idx) -> tuple[np.ndarray, np.ndarray]:
    return table.X[idx], table.age[idx]


def _row_ids(table: features.FeatureTable, idx) -> list[str]:
    return [f"{table.subject_ids[i]}:{table.segment_ids[i]}" for i in idx]


def evaluate_segmented(table: features.FeatureTable, cfg: PipelineConfig) -> dict:
    """Holdout 60/20/20: grid-search on train/val, report on test."""
    plan = evaluate.SplitPlan(
        kind="holdout_60_20_20", seed=cfg.seed, grouping=cfg.split.grouping
    )
    parts = evaluate.split(plan, table.n_rows, table.subject_ids)
    results = {}
    for kind in MODEL_KINDS:
        grid = models.expand_grid(kind, cfg.models.grids[kind], seed=cfg.seed)
        gs = models.grid_search(
            grid, _xy(table, parts.train), _xy(table, parts.val), columns=list(table.columns)
        )
        y_pred = models.predict(gs.best_model, table.X[parts.test])
        report = evaluate.make_report(
            kind,
            _row_ids(table, parts.test),
            table.age[parts.test],
            y_pred,
            bin_width=cfg.report.histogram_bin_years,
        )
        results[kind] = {
            "model": gs.best_model,
            "report": report,
            "leaderboard": gs.leaderboard,
            "split_sizes": [len(parts.train), len(parts.val), len(parts.test)],
        }
    return results


def _cv_predictions(table, folds, fit_fn):
    """Pooled out-of-fold predictions plus per-fold metrics."""
    y_pred = np.empty(table.n_rows)
    per_fold = []
    order = []
    for fold_idx, val_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != fold_idx])
        model = fit_fn(table.X[train_idx], table.age[train_idx])
        pred = models.predict(model, table.X[val_idx])
        y_pred[val_idx] = pred
        per_fold.append(
            {
                "fold": fold_idx,
                "n_val": int(len(val_idx)),
                "mse": evaluate.mse(table.age[val_idx], pred),
            }
        )
        order.extend(val_idx.tolist())
    return y_pred, per_fold


def evaluate_unsegmented(table: features.FeatureTable, cfg: PipelineConfig) -> dict:
    """k-fold cross-validation; grid points compete on pooled CV MSE."""
    plan = evaluate.SplitPlan(
        kind="kfold", k=cfg.split.k, seed=cfg.seed, grouping=cfg.split.grouping
    )
    folds = evaluate.split(plan, table.n_rows, table.subject_ids).folds
    results = {}
    for kind in MODEL_KINDS:
        grid = models.expand_grid(kind, cfg.models.grids[kind], seed=cfg.seed)
        best = None
        for spec in grid:
            y_pred, per_fold = _cv_predictions(
                table,
                folds,
                lambda X, y, s=spec: models.fit_model(s, X, y, columns=list(table.columns)),
            )
            score = evaluate.mse(table.age, y_pred)
            if best is None or score < best[1]:
                best = (spec, score, y_pred, per_fold)
        spec, _, y_pred, per_fold = best
        report = evaluate.make_report(
            kind,
            _row_ids(table, range(table.n_rows)),
            table.age,
            y_pred,
            bin_width=cfg.report.histogram_bin_years,
            per_fold=per_fold,
        )
        final_model = models.fit_model(spec, table.X, table.age, columns=list(table.columns))
        results[kind] = {"model": final_model, "report": report, "leaderboard": None}
    return results


def evaluate_finetune(
    table: features.FeatureTable, cfg: PipelineConfig, pretrained: models.TrainedModel
) -> dict:
    """k-fold over the fine-tune rows: each fold is predicted by the
    pretrained model fine-tuned on the remaining folds."""
    plan = evaluate.SplitPlan(
        kind="kfold", k=cfg.split.k, seed=cfg.seed, grouping=cfg.split.grouping
    )
    folds = evaluate.split(plan, table.n_rows, table.subject_ids).folds
    policy = models.FinetunePolicy(
        name=cfg.finetune.policy,
        k=cfg.finetune.k,
        weight=cfg.finetune.weight,
        iterations=cfg.finetune.iterations,
    )
    cols = list(table.columns)

    def fit_fn(X, y):
        return models.finetune_model(pretrained, X, y, cols, policy=policy)

    y_pred, per_fold = _cv_predictions(table, folds, fit_fn)
    kind = pretrained.spec.kind
    report = evaluate.make_report(
        kind,
        _row_ids(table, range(table.n_rows)),
        table.age,
        y_pred,
        bin_width=cfg.report.histogram_bin_years,
        per_fold=per_fold,
    )
    final_model = models.finetune_model(pretrained, table.X, table.age, cols, policy=policy)
    return {kind: {"model": final_model, "report": report, "leaderboard": None}}


def feature_table_hash(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_scenario_reports(
    results: dict,
    table: features.FeatureTable,
    cfg: PipelineConfig,
    scenario: str,
    out_dir: Path | str,
    dataset_hash_hex: str | None = None,
) -> dict:
    """Persist models, eval reports, and the xAI reports; returns summary."""
    out = Path(out_dir)
    reports_dir = out / "reports"
    models_dir = out / "models"
    summary = {"scenario": scenario, "n_rows": table.n_rows, "models": {}}

    for kind, res in results.items():
        res["model"].provenance.setdefault("scenario", scenario)
        if dataset_hash_hex:
            res["model"].provenance.setdefault("dataset_hash", dataset_hash_hex)
        models.save_model(res["model"], models_dir / f"{kind}.json")
        write_json(res["report"].as_dict(), reports_dir / f"eval_{kind}.json")
        if res.get("leaderboard"):
            write_json(
                [
                    {"spec": dataclasses.asdict(s), "val_mse": m}
                    for s, m in res["leaderboard"]
                ],
                reports_dir / f"leaderboard_{kind}.json",
            )
        summary["models"][kind] = {"mse": res["report"].mse, "r2": res["report"].r2}

    method = cfg.report.correlation_method
    corr_age = evaluate.pearson_matrix(table, target="age", method=method)
    corr_smoker = evaluate.pearson_matrix(table, target="smoker", method=method)
    write_json(corr_age.as_dict(), reports_dir / "correlation_age.json")
    write_json(corr_smoker.as_dict(), reports_dir / "correlation_smoker.json")
    groups = evaluate.group_stats(table)
    write_json(groups.as_dict(), reports_dir / "group_stats.json")

    write_json(summary, reports_dir / "summary.json")
    return summary


def run_pipeline(
    cfg: PipelineConfig,
    scenario: str,
    data_root: Path | str,
    out_dir: Path | str,
    pretrained_path: Path | str | None = None,
) -> dict:
    """Execute the full pipeline for one scenario into out_dir."""
    if scenario not in SCENARIOS:
        raise DataError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if scenario == "finetune" and pretrained_path is None:
        raise DataError("scenario 'finetune' requires a pretrained model (--pretrained)")
    root = Path(data_root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ingest.load_manifest(root / "manifest.json")

    preprocess_stage(root, out / "clean", cfg)
    delineate_stage(out / "clean", out / "fiducials", cfg)
    scope = "segmented" if scenario == "segmented" else "full"
    features_stage(root, out / "clean", out / "fiducials", scope, cfg, out / "features.csv")
    table = features.read_feature_csv(out / "features.csv")

    if scenario == "segmented":
        results = evaluate_segmented(table, cfg)
    elif scenario == "unsegmented":
        results = evaluate_unsegmented(table, cfg)
    else:
        pretrained = models.load_model(pretrained_path)
        results = evaluate_finetune(table, cfg, pretrained)

    summary = write_scenario_reports(
        results, table, cfg, scenario, out,
        dataset_hash_hex=feature_table_hash(out / "features.csv"),
    )
    write_json(
        {
            "package_version": __version__,
            "scenario": scenario,
            "config": config_to_dict(cfg),
            "config_hash": config_hash(cfg),
            "dataset_hash": dataset_hash(manifest),
        },
        out / "run_manifest.json",
    )
    return summary
