"""Render report JSON into tables (CSV + markdown) and matplotlib figures.

Rendering is a pure function of the report directory: rerendering produces
identical bytes.  Figures go to PNG next to the delimited tables so the
output directory is self-contained.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import DataError

_REQUIRED = ("summary.json",)
_PNG_METADATA = {"Software": "ecgage"}  # drop the version-bearing default


def _load(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _savefig(fig, path: Path) -> None:
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


def _render_summary(reports_dir: Path, out: Path) -> None:
    summary = _load(reports_dir / "summary.json")
    scenario = summary["scenario"]
    rows = [
        [kind, f"{m['mse']:.4f}", f"{m['r2']:.4f}"]
        for kind, m in summary["models"].items()
    ]
    _write_csv(out / "summary.csv", ["model", "mse", "r2"], rows)
    lines = [
        f"# Scenario: {scenario} ({summary['n_rows']} rows)",
        "",
        "| model | MSE | R2 |",
        "|---|---|---|",
    ]
    lines += [f"| {r[0]} | {r[1]} | {r[2]} |" for r in rows]
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _render_correlations(reports_dir: Path, out: Path) -> None:
    for target in ("age", "smoker"):
        path = reports_dir / f"correlation_{target}.json"
        if not path.is_file():
            continue
        doc = _load(path)
        entries = sorted(doc["correlations"], key=lambda e: e["r"])
        _write_csv(
            out / f"correlation_{target}.csv",
            ["feature", "r"],
            [[e["feature"], repr(e["r"])] for e in entries],
        )
        fig, ax = plt.subplots(figsize=(7, 0.32 * len(entries) + 1.2))
        names = [e["feature"] for e in entries]
        values = [e["r"] for e in entries]
        colors = ["#c0504d" if v < 0 else "#4f81bd" for v in values]
        ax.barh(range(len(entries)), values, color=colors)
        ax.set_yticks(range(len(entries)))
        ax.set_yticklabels(names, fontsize=8)
        ax.axvline(0.0, color="k", linewidth=0.8)
        ax.set_xlabel(f"{doc['method']} r")
        ax.set_title(f"Feature correlation with {target}")
        fig.tight_layout()
        _savefig(fig, out / f"correlation_{target}.png")


def _render_histograms(reports_dir: Path, out: Path) -> None:
    eval_paths = sorted(reports_dir.glob("eval_*.json"))
    if not eval_paths:
        return
    docs = [_load(p) for p in eval_paths]
    fig, axes = plt.subplots(
        1, len(docs), figsize=(3.2 * len(docs), 3.0), squeeze=False
    )
    for ax, doc in zip(axes[0], docs):
        hist = doc["histogram"]
        edges = hist["edges"]
        counts = hist["counts"]
        centers = [(a + b) / 2 for a, b in zip(edges[:-1], edges[1:])]
        ax.bar(centers, counts, width=hist["bin_width"] * 0.92, color="#4f81bd")
        ax.set_title(doc["model_kind"], fontsize=10)
        ax.set_xlabel("error (years)")
        _write_csv(
            out / f"histogram_{doc['model_kind']}.csv",
            ["bin_left", "bin_right", "count"],
            [
                [repr(a), repr(b), c]
                for a, b, c in zip(edges[:-1], edges[1:], counts)
            ],
        )
    axes[0][0].set_ylabel("rows")
    fig.suptitle("Prediction error distribution")
    fig.tight_layout()
    _savefig(fig, out / "error_histograms.png")


def _render_group_stats(reports_dir: Path, out: Path, top_n: int = 11) -> None:
    path = reports_dir / "group_stats.json"
    if not path.is_file():
        return
    doc = _load(path)
    feats = doc["features"]
    _write_csv(
        out / "group_stats.csv",
        ["feature", "mean_smoker", "std_smoker", "mean_nonsmoker", "std_nonsmoker", "smd"],
        [
            [
                e["feature"],
                repr(e["mean_smoker"]),
                repr(e["std_smoker"]),
                repr(e["mean_nonsmoker"]),
                repr(e["std_nonsmoker"]),
                repr(e["smd"]),
            ]
            for e in feats
        ],
    )
    shown = feats[:top_n]
    ncols = 4
    nrows = (len(shown) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.0 * ncols, 2.6 * nrows), squeeze=False)
    for i, e in enumerate(shown):
        ax = axes[i // ncols][i % ncols]
        ax.bar(
            [0, 1],
            [e["mean_smoker"], e["mean_nonsmoker"]],
            yerr=[e["std_smoker"], e["std_nonsmoker"]],
            color=["#c0504d", "#4f81bd"],
            capsize=4,
        )
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["smoker", "non-smoker"], fontsize=8)
        ax.set_title(f"{e['feature']} (d={e['smd']:.2f})", fontsize=9)
    for j in range(len(shown), nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    fig.suptitle(
        f"Smoker (n={doc['n_smokers']}) vs non-smoker (n={doc['n_nonsmokers']}) features"
    )
    fig.tight_layout()
    _savefig(fig, out / "group_stats.png")


def report_render(report_dir: Path | str, out_dir: Path | str | None = None) -> Path:
    """Render everything found under <report_dir>/reports into tables and
    figures; raises listing any missing required artifact."""
    base = Path(report_dir)
    reports_dir = base / "reports" if (base / "reports").is_dir() else base
    missing = [name for name in _REQUIRED if not (reports_dir / name).is_file()]
    if missing:
        raise DataError(
            f"report directory {reports_dir} is missing artifact(s): {', '.join(missing)}"
        )
    out = Path(out_dir) if out_dir is not None else reports_dir / "rendered"
    out.mkdir(parents=True, exist_ok=True)
    _render_summary(reports_dir, out)
    _render_correlations(reports_dir, out)
    _render_histograms(reports_dir, out)
    _render_group_stats(reports_dir, out)
    return out
