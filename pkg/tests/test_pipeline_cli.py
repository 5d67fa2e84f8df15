import json
from pathlib import Path

import numpy as np
import pytest

from ecgage import cli, features, models, synth
from ecgage.config import PipelineConfig, config_from_dict, load_config
from ecgage.errors import DataError
from ecgage.pipeline import dataset_hash, run_pipeline
from ecgage.report import report_render

SMALL_GRIDS = {
    "linear": [{}],
    "ridge": {"ridge_lambda": [1.0]},
    "tree": [{"tree_max_depth": 6, "tree_min_leaf": 2}],
    "forest": [{"forest_n_trees": 8, "forest_max_features": 7, "tree_min_leaf": 2}],
}


def small_config(seed=42):
    cfg = PipelineConfig()
    cfg.seed = seed
    cfg.models.grids = dict(SMALL_GRIDS)
    return cfg


def write_config(tmp_path, seed=42):
    doc = {"seed": seed, "models": {"grids": SMALL_GRIDS}}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def seg_run(small_cohort, tmp_path_factory):
    root, _ = small_cohort
    out = tmp_path_factory.mktemp("seg_run")
    summary = run_pipeline(small_config(), "segmented", root, out)
    return root, out, summary


class TestConfig:
    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(DataError, match="bogus"):
            config_from_dict({"bogus": 1})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(DataError, match="preprocess"):
            config_from_dict({"preprocess": {"nonsense": 2}})

    def test_unknown_delineate_key_rejected(self):
        with pytest.raises(DataError, match="delineate"):
            config_from_dict({"delineate": {"nope": 1}})

    def test_load_round_trip(self, tmp_path):
        path = write_config(tmp_path, seed=7)
        cfg = load_config(path)
        assert cfg.seed == 7
        assert cfg.models.grids["forest"][0]["forest_n_trees"] == 8


class TestRunPipeline:
    def test_report_files_present(self, seg_run):
        _, out, summary = seg_run
        reports = out / "reports"
        for name in (
            "summary.json",
            "eval_linear.json",
            "eval_ridge.json",
            "eval_tree.json",
            "eval_forest.json",
            "correlation_age.json",
            "correlation_smoker.json",
            "group_stats.json",
        ):
            assert (reports / name).is_file(), name
        assert (out / "run_manifest.json").is_file()
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["config_hash"]
        assert manifest["dataset_hash"]
        assert set(summary["models"]) == {"linear", "ridge", "tree", "forest"}

    def test_unknown_scenario_rejected(self, small_cohort, tmp_path):
        root, _ = small_cohort
        with pytest.raises(DataError, match="scenario"):
            run_pipeline(small_config(), "mystery", root, tmp_path / "x")

    def test_finetune_requires_pretrained(self, small_cohort, tmp_path):
        root, _ = small_cohort
        with pytest.raises(DataError, match="pretrained"):
            run_pipeline(small_config(), "finetune", root, tmp_path / "x")

    def test_byte_identical_reruns(self, small_cohort, tmp_path):
        root, _ = small_cohort
        cfg = small_config(seed=5)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        run_pipeline(cfg, "unsegmented", root, out_a)
        run_pipeline(cfg, "unsegmented", root, out_b)
        for rel in sorted(p.relative_to(out_a) for p in out_a.rglob("*.json")):
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_dataset_hash_stable_and_sensitive(self, small_cohort, tmp_path):
        root, _ = small_cohort
        from ecgage.ingest import load_manifest

        manifest = load_manifest(root / "manifest.json")
        assert dataset_hash(manifest) == dataset_hash(manifest)
        other_root = tmp_path / "other"
        synth.write_cohort(synth.make_cohort(3, seed=99, duration_s=20.0), other_root)
        other = load_manifest(other_root / "manifest.json")
        assert dataset_hash(manifest) != dataset_hash(other)


class TestStageComposition:
    def test_staged_cli_equals_run_pipeline(self, small_cohort, tmp_path, seg_run):
        root, _ = small_cohort
        _, run_out, _ = seg_run
        cfg_path = write_config(tmp_path)
        stage = tmp_path / "staged"
        assert cli.main([
            "preprocess", "--config", str(cfg_path),
            "--data-root", str(root), "--out", str(stage / "clean"),
        ]) == 0
        assert cli.main([
            "delineate", "--config", str(cfg_path),
            "--in", str(stage / "clean"), "--out", str(stage / "fiducials"),
        ]) == 0
        assert cli.main([
            "features", "--config", str(cfg_path), "--scope", "segmented",
            "--data-root", str(root), "--clean", str(stage / "clean"),
            "--fiducials", str(stage / "fiducials"), "--out", str(stage / "features.csv"),
        ]) == 0
        assert cli.main([
            "evaluate", "--config", str(cfg_path), "--features", str(stage / "features.csv"),
            "--scenario", "S", "--report-dir", str(stage),
        ]) == 0
        assert (stage / "features.csv").read_bytes() == (run_out / "features.csv").read_bytes()
        assert (stage / "reports" / "summary.json").read_bytes() == (
            run_out / "reports" / "summary.json"
        ).read_bytes()


class TestReportRender:
    def test_renders_tables_and_figures(self, seg_run):
        _, out, _ = seg_run
        rendered = report_render(out)
        names = {p.name for p in rendered.iterdir()}
        assert {"summary.csv", "summary.md", "correlation_age.png",
                "correlation_smoker.png", "error_histograms.png",
                "group_stats.png", "group_stats.csv"} <= names

    def test_rerender_identical_bytes(self, seg_run, tmp_path):
        _, out, _ = seg_run
        a = report_render(out, tmp_path / "a")
        b = report_render(out, tmp_path / "b")
        for rel in sorted(p.name for p in a.iterdir()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_empty_directory_lists_missing(self, tmp_path):
        with pytest.raises(DataError, match="summary.json"):
            report_render(tmp_path)


class TestCli:
    def test_synth_then_ingest(self, tmp_path):
        synth_cfg = tmp_path / "synth.json"
        synth_cfg.write_text(json.dumps({"n_subjects": 3, "duration_s": 20.0, "seed": 4}))
        out = tmp_path / "data"
        assert cli.main(["synth", "--synth-config", str(synth_cfg), "--out", str(out)]) == 0
        assert cli.main(["ingest", "--data-root", str(out)]) == 0

    def test_ingest_reports_data_error(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json")
        assert cli.main(["ingest", "--data-root", str(tmp_path)]) == 3

    def test_usage_error_exit_code(self, small_cohort, tmp_path):
        root, _ = small_cohort
        with pytest.raises(SystemExit) as exc:
            cli.main([
                "run", "--scenario", "finetune",
                "--data-root", str(root), "--out", str(tmp_path / "x"),
            ])
        assert exc.value.code == 2

    def test_train_and_finetune_commands(self, seg_run, tmp_path):
        _, run_out, _ = seg_run
        cfg_path = write_config(tmp_path)
        feats = run_out / "features.csv"
        out = tmp_path / "trained"
        assert cli.main([
            "train", "--config", str(cfg_path), "--features", str(feats),
            "--model", "forest", "--split", "60/20/20", "--out", str(out),
        ]) == 0
        model_path = out / "forest.json"
        assert model_path.is_file()
        leaderboard = json.loads((out / "forest.train.json").read_text())
        assert len(leaderboard["leaderboard"]) == 1

        tuned_dir = tmp_path / "tuned"
        assert cli.main([
            "finetune", "--pretrained", str(model_path), "--data", str(feats),
            "--policy", "forest-augment:k=4,w=0.5", "--out", str(tuned_dir),
        ]) == 0
        tuned = models.load_model(tuned_dir / "finetuned.json")
        weights = [w for w, _ in tuned.params.groups]
        assert weights == [0.5, 0.5]

    def test_run_scenario_finetune(self, small_cohort, seg_run, tmp_path):
        root, _ = small_cohort
        _, run_out, _ = seg_run
        out = tmp_path / "tl"
        assert cli.main([
            "run", "--scenario", "finetune", "--data-root", str(root),
            "--out", str(out), "--pretrained", str(run_out / "models" / "forest.json"),
            "--config", str(write_config(tmp_path)),
        ]) == 0
        summary = json.loads((out / "reports" / "summary.json").read_text())
        assert summary["scenario"] == "finetune"
        assert "forest" in summary["models"]

    def test_segment_command(self, seg_run, tmp_path):
        _, run_out, _ = seg_run
        out_csv = tmp_path / "segments.csv"
        assert cli.main([
            "segment", "--in", str(run_out / "clean"), "--out", str(out_csv),
        ]) == 0
        lines = out_csv.read_text().strip().splitlines()
        # 8 subjects x 60 s -> 56 windows each, plus header
        assert len(lines) == 1 + 8 * 56

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0

    def test_numeric_error_exit_code(self, small_cohort, tmp_path):
        root, _ = small_cohort
        # cutoff at the Nyquist frequency is a numeric failure, code 4
        rc = cli.main([
            "preprocess", "--data-root", str(root), "--out", str(tmp_path / "c"),
            "--cutoff-hz", "50.0",
        ])
        assert rc == 4

    def test_annotations_share_fiducial_format(self, small_cohort):
        from ecgage.delineate import read_fiducials_csv

        root, cohort = small_cohort
        sid = cohort.subjects[0].metadata.subject_id
        fids = read_fiducials_csv(root / "annotations" / f"{sid}.csv")
        assert len(fids) == len(cohort.subjects[0].annotation.cycles)
        assert all(f.ordered() for f in fids)

    def test_sex_encoding_configurable(self, small_cohort, tmp_path):
        root, _ = small_cohort
        doc = {
            "seed": 42,
            "models": {"grids": SMALL_GRIDS},
            "features": {"sex_encoding": {"male": -1.0, "female": 1.0}},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(doc))
        stage = tmp_path / "enc"
        for cmd in (
            ["preprocess", "--config", str(cfg_path), "--data-root", str(root),
             "--out", str(stage / "clean")],
            ["delineate", "--config", str(cfg_path), "--in", str(stage / "clean"),
             "--out", str(stage / "fid")],
            ["features", "--config", str(cfg_path), "--scope", "full",
             "--data-root", str(root), "--clean", str(stage / "clean"),
             "--fiducials", str(stage / "fid"), "--out", str(stage / "f.csv")],
        ):
            assert cli.main(cmd) == 0
        table = features.read_feature_csv(stage / "f.csv")
        assert set(table.column("sex")) <= {-1.0, 1.0}


class TestSpearmanFlag:
    def test_monotone_invariance(self):
        from ecgage.evaluate import pearson, spearman

        rng = np.random.default_rng(12)
        x = rng.normal(size=80)
        y = x + rng.normal(0, 0.5, 80)
        # a monotone distortion changes pearson but not spearman
        assert spearman(np.exp(x), y) == pytest.approx(spearman(x, y), rel=1e-12)
        assert abs(pearson(np.exp(x), y) - pearson(x, y)) > 1e-3

    def test_method_flag_in_reports(self, seg_run, tmp_path):
        _, run_out, _ = seg_run
        cfg_doc = {
            "seed": 42,
            "models": {"grids": SMALL_GRIDS},
            "report": {"correlation_method": "spearman"},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg_doc))
        assert cli.main([
            "evaluate", "--config", str(cfg_path),
            "--features", str(run_out / "features.csv"),
            "--scenario", "US", "--report-dir", str(tmp_path / "rep"),
        ]) == 0
        doc = json.loads((tmp_path / "rep" / "reports" / "correlation_age.json").read_text())
        assert doc["method"] == "spearman"


class TestFeatureCsvErrors:
    def test_wrong_header_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError, match="header"):
            features.read_feature_csv(p)
