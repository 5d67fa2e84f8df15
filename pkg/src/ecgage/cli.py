"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluate, features, ingest, models, synth
from .config import PipelineConfig, load_config, write_json
from .models.base import KINDS as MODEL_KIND_NAMES
from .errors import DataError, NumericError
from .pipeline import (
    SCENARIOS,
    delineate_stage,
    features_stage,
    preprocess_stage,
    load_clean,
    run_pipeline,
)
from .report import report_render
from .segment import make_segments

_SCENARIO_ALIASES = {
    "S": "segmented",
    "US": "unsegmented",
    "US+TL": "finetune",
    "segmented": "segmented",
    "unsegmented": "unsegmented",
    "finetune": "finetune",
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--data-root", type=Path, help="dataset root directory")
    parser.add_argument("--out", type=Path, help="output directory or file")


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _require(args, parser, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            parser.error(f"--{name} is required")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgage",
        description="Single-lead ECG vascular-age pipeline",
    )
    parser.add_argument("--version", action="version", version=f"ecgage {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort with annotations")
    _common(p)
    p.add_argument(
        "--synth-config",
        type=Path,
        help="cohort generator JSON (--config is read as this for synth)",
    )

    p = sub.add_parser("ingest", help="validate a dataset manifest")
    _common(p)

    p = sub.add_parser("preprocess", help="denoise, detrend, and normalize recordings")
    _common(p)
    p.add_argument("--cutoff-hz", type=float)
    p.add_argument("--order", type=int)
    p.add_argument("--mode", choices=["forward", "zero-phase"])
    p.add_argument("--baseline-ms", help="stage1,stage2 median windows in ms")

    p = sub.add_parser("delineate", help="detect R peaks and wave fiducials")
    _common(p)
    p.add_argument("--in", dest="in_dir", type=Path, help="clean recordings directory")

    p = sub.add_parser("segment", help="list overlapping windows per recording")
    _common(p)
    p.add_argument("--in", dest="in_dir", type=Path, help="clean recordings directory")
    p.add_argument("--window-s", type=float)
    p.add_argument("--stride-s", type=float)

    p = sub.add_parser("features", help="extract the 21-feature model rows")
    _common(p)
    p.add_argument("--scope", choices=["segmented", "full"], default="segmented")
    p.add_argument("--clean", type=Path, help="clean recordings directory")
    p.add_argument("--fiducials", type=Path, help="fiducials directory")

    p = sub.add_parser("train", help="grid-search one model kind on a feature CSV")
    _common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", choices=list(MODEL_KIND_NAMES), required=True)
    p.add_argument("--grid", type=Path, help="grid JSON; defaults to the config grid")
    p.add_argument("--split", default="60/20/20", help="train/val/test percentages")

    p = sub.add_parser("finetune", help="fine-tune a pretrained model on new rows")
    _common(p)
    p.add_argument("--pretrained", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="fine-tune feature CSV")
    p.add_argument("--policy", default="forest-augment", help="e.g. forest-augment:k=100,w=0.5")

    p = sub.add_parser("evaluate", help="run one evaluation scenario on a feature CSV")
    _common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--scenario", choices=sorted(_SCENARIO_ALIASES), required=True)
    p.add_argument("--report-dir", type=Path, required=True)
    p.add_argument("--pretrained", type=Path)

    p = sub.add_parser("run", help="execute the full pipeline for one scenario")
    _common(p)
    p.add_argument("--scenario", choices=sorted(_SCENARIO_ALIASES), default="segmented")
    p.add_argument("--pretrained", type=Path)

    p = sub.add_parser("report", help="render tables and figures from reports")
    _common(p)
    p.add_argument("--report-dir", type=Path, required=True)

    return parser


# ---------------------------------------------------------------------------
# Subcommand bodies


def _synth_rules(doc: dict):
    age_doc = doc.pop("age_rule", {})
    smoker_doc = doc.pop("smoker_rule", {})
    for cls, d, label in (
        (synth.AgeRule, age_doc, "age_rule"),
        (synth.SmokerRule, smoker_doc, "smoker_rule"),
    ):
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise DataError(f"unknown {label} key(s): {sorted(unknown)}")
    return synth.AgeRule(**age_doc), synth.SmokerRule(**smoker_doc)


def cmd_synth(args, parser) -> int:
    _require(args, parser, "out")
    doc = {}
    config_path = args.synth_config or args.config
    if config_path:
        if not config_path.is_file():
            raise DataError(f"synth config not found: {config_path}")
        try:
            doc = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{config_path}: invalid JSON: {exc}") from None
    age_rule, smoker_rule = _synth_rules(doc)
    known = {"n_subjects", "duration_s", "fs_hz", "seed", "noise_snr_db"}
    unknown = set(doc) - known
    if unknown:
        raise DataError(f"unknown synth config key(s): {sorted(unknown)}")
    cohort = synth.make_cohort(
        n_subjects=int(doc.get("n_subjects", 42)),
        age_rule=age_rule,
        smoker_rule=smoker_rule,
        seed=int(doc.get("seed", args.seed if args.seed is not None else 0)),
        duration_s=float(doc.get("duration_s", 180.0)),
        fs_hz=float(doc.get("fs_hz", 100.0)),
        noise_snr_db=doc.get("noise_snr_db"),
    )
    manifest_path = synth.write_cohort(cohort, args.out)
    print(f"wrote {len(cohort.subjects)} subjects under {args.out} ({manifest_path.name})")
    return 0


def cmd_ingest(args, parser) -> int:
    _require(args, parser, "data-root")
    cfg = _load_cfg(args)
    manifest = ingest.load_manifest(args.data_root / "manifest.json")
    report = ingest.validate_dataset(manifest, cfg.sampling_rate_hz)
    print(
        f"dataset {manifest.dataset_name} v{manifest.version}: "
        f"{report.summary['total']} subjects "
        f"({report.summary['smokers']} smokers / {report.summary['non_smokers']} non-smokers), "
        f"total duration {report.total_duration_s:.0f} s"
    )
    for s in report.subjects:
        print(
            f"  {s.subject_id}: {s.duration_s:.1f} s, masked {s.masked_fraction:.1%}, "
            f"metadata {'ok' if s.metadata_complete else 'MISSING'}"
        )
    for err in report.errors:
        print(f"  error: {err}", file=sys.stderr)
    return 3 if report.errors else 0


def cmd_preprocess(args, parser) -> int:
    _require(args, parser, "data-root", "out")
    cfg = _load_cfg(args)
    if args.cutoff_hz is not None:
        cfg.preprocess.cutoff_hz = args.cutoff_hz
    if args.order is not None:
        cfg.preprocess.order = args.order
    if args.mode is not None:
        cfg.preprocess.mode = args.mode.replace("-", "_")
    if args.baseline_ms is not None:
        parts = args.baseline_ms.split(",")
        if len(parts) != 2:
            parser.error("--baseline-ms expects two comma-separated values")
        cfg.preprocess.baseline_ms = [float(parts[0]), float(parts[1])]
    sids = preprocess_stage(args.data_root, args.out, cfg)
    print(f"preprocessed {len(sids)} recordings into {args.out}")
    return 0


def cmd_delineate(args, parser) -> int:
    _require(args, parser, "out")
    if args.in_dir is None:
        parser.error("--in is required")
    cfg = _load_cfg(args)
    delineate_stage(args.in_dir, args.out, cfg)
    n = len(list(Path(args.out).glob("*.csv")))
    print(f"delineated {n} recordings into {args.out}")
    return 0


def cmd_segment(args, parser) -> int:
    if args.in_dir is None:
        parser.error("--in is required")
    cfg = _load_cfg(args)
    window = args.window_s if args.window_s is not None else cfg.segment.window_s
    stride = args.stride_s if args.stride_s is not None else cfg.segment.stride_s
    rows = []
    for path in sorted(Path(args.in_dir).glob("*.csv")):
        clean = load_clean(args.in_dir, path.stem, cfg)
        segs = make_segments(
            clean.n_samples,
            cfg.sampling_rate_hz,
            window_s=window,
            stride_s=stride,
            subject_id=path.stem,
            mask=clean.validity_mask,
        )
        rows.extend(segs)
        print(f"  {path.stem}: {len(segs)} segments")
    if args.out:
        import csv as _csv

        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["subject_id", "segment_id", "start_s", "end_s", "usable"])
            for s in rows:
                w.writerow([s.subject_id, s.segment_id, s.start_s, s.end_s, int(s.usable)])
    print(f"{len(rows)} segments total")
    return 0


def cmd_features(args, parser) -> int:
    _require(args, parser, "data-root", "out")
    if args.clean is None or args.fiducials is None:
        parser.error("--clean and --fiducials are required")
    cfg = _load_cfg(args)
    meta = features_stage(
        args.data_root, args.clean, args.fiducials, args.scope, cfg, args.out
    )
    print(
        f"wrote {meta['rows']} rows to {args.out} "
        f"({meta['rows_dropped_missing_predictor']} dropped for missing predictors)"
    )
    return 0


def cmd_train(args, parser) -> int:
    _require(args, parser, "out")
    cfg = _load_cfg(args)
    if args.split != "60/20/20":
        parser.error("only the 60/20/20 holdout split is supported")
    table = features.read_feature_csv(args.features)
    if args.grid:
        if not args.grid.is_file():
            raise DataError(f"grid file not found: {args.grid}")
        try:
            grid_doc = json.loads(args.grid.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.grid}: invalid JSON: {exc}") from None
    else:
        grid_doc = cfg.models.grids[args.model]
    grid = models.expand_grid(args.model, grid_doc, seed=cfg.seed)
    plan = evaluate.SplitPlan(
        kind="holdout_60_20_20", seed=cfg.seed, grouping=cfg.split.grouping
    )
    parts = evaluate.split(plan, table.n_rows, table.subject_ids)
    gs = models.grid_search(
        grid,
        (table.X[parts.train], table.age[parts.train]),
        (table.X[parts.val], table.age[parts.val]),
        columns=list(table.columns),
    )
    y_pred = models.predict(gs.best_model, table.X[parts.test])
    test_mse = evaluate.mse(table.age[parts.test], y_pred)
    test_r2 = evaluate.r2(table.age[parts.test], y_pred)
    out = Path(args.out)
    from .pipeline import feature_table_hash

    gs.best_model.provenance["dataset_hash"] = feature_table_hash(args.features)
    models.save_model(gs.best_model, out / f"{args.model}.json")
    write_json(
        {
            "model": args.model,
            "best_spec": dataclasses.asdict(gs.best_spec),
            "val_mse": gs.best_score,
            "test_mse": test_mse,
            "test_r2": test_r2,
            "leaderboard": [
                {"spec": dataclasses.asdict(s), "val_mse": m} for s, m in gs.leaderboard
            ],
            "split_sizes": [len(parts.train), len(parts.val), len(parts.test)],
        },
        out / f"{args.model}.train.json",
    )
    print(
        f"{args.model}: val MSE {gs.best_score:.4f}, test MSE {test_mse:.4f}, "
        f"test R2 {test_r2:.4f} -> {out / (args.model + '.json')}"
    )
    return 0


def cmd_finetune(args, parser) -> int:
    _require(args, parser, "out")
    pretrained = models.load_model(args.pretrained)
    table = features.read_feature_csv(args.data)
    policy = models.parse_policy(args.policy)
    tuned = models.finetune_model(
        pretrained, table.X, table.age, list(table.columns), policy=policy
    )
    out = Path(args.out)
    models.save_model(tuned, out / "finetuned.json")
    y_pred = models.predict(tuned, table.X)
    print(
        f"fine-tuned {pretrained.spec.kind} on {table.n_rows} rows "
        f"(training-set MSE {evaluate.mse(table.age, y_pred):.4f}) -> {out / 'finetuned.json'}"
    )
    return 0


def cmd_evaluate(args, parser) -> int:
    from .pipeline import (
        evaluate_finetune,
        evaluate_segmented,
        evaluate_unsegmented,
        write_scenario_reports,
    )

    cfg = _load_cfg(args)
    scenario = _SCENARIO_ALIASES[args.scenario]
    if scenario == "finetune" and args.pretrained is None:
        parser.error("scenario US+TL/finetune requires --pretrained")
    table = features.read_feature_csv(args.features)
    if scenario == "segmented":
        results = evaluate_segmented(table, cfg)
    elif scenario == "unsegmented":
        results = evaluate_unsegmented(table, cfg)
    else:
        results = evaluate_finetune(table, cfg, models.load_model(args.pretrained))
    from .pipeline import feature_table_hash

    summary = write_scenario_reports(
        results, table, cfg, scenario, args.report_dir,
        dataset_hash_hex=feature_table_hash(args.features),
    )
    for kind, m in summary["models"].items():
        print(f"{kind}: MSE {m['mse']:.4f}, R2 {m['r2']:.4f}")
    return 0


def cmd_run(args, parser) -> int:
    _require(args, parser, "data-root", "out")
    cfg = _load_cfg(args)
    scenario = _SCENARIO_ALIASES[args.scenario]
    if scenario == "finetune" and args.pretrained is None:
        parser.error("scenario finetune requires --pretrained")
    summary = run_pipeline(cfg, scenario, args.data_root, args.out, args.pretrained)
    print(f"scenario {scenario}: {summary['n_rows']} rows")
    for kind, m in summary["models"].items():
        print(f"  {kind}: MSE {m['mse']:.4f}, R2 {m['r2']:.4f}")
    print(f"reports under {Path(args.out) / 'reports'}")
    return 0


def cmd_report(args, parser) -> int:
    out = report_render(args.report_dir, args.out)
    print(f"rendered tables and figures into {out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "delineate": cmd_delineate,
    "segment": cmd_segment,
    "features": cmd_features,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
