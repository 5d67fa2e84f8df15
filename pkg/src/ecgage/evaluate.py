"""Splits, metrics, error histograms, and the feature-analysis reports.

The holdout split reproduces the 60/20/20 bookkeeping (sizes round(0.6 n),
round(0.2 n), remainder); k-fold partitions are a disjoint cover with fold
sizes differing by at most one.  Grouping by subject keeps all rows of a
subject in one part, offered because row-level splits of overlapping
segments leak subject identity across parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .features import DEMOGRAPHIC_COLUMNS, ECG_FEATURE_COLUMNS, FeatureTable


@dataclass(frozen=True)
class SplitPlan:
    kind: str = "holdout_60_20_20"  # or "kfold"
    k: int = 5
    seed: int = 0
    grouping: str = "by_row"  # or "by_subject"

    def validate(self) -> None:
        if self.kind not in ("holdout_60_20_20", "kfold"):
            raise DataError(f"unknown split kind {self.kind!r}")
        if self.grouping not in ("by_row", "by_subject"):
            raise DataError(f"unknown grouping {self.grouping!r}")
        if self.kind == "kfold" and self.k < 2:
            raise DataError("k-fold needs k >= 2")


@dataclass
class HoldoutSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class KFoldSplit:
    folds: list[np.ndarray]  # validation indices per fold


def _group_order(subject_ids: list[str], rng: np.random.Generator) -> list[np.ndarray]:
    """Row-index blocks per subject, subjects in seeded shuffled order."""
    order: dict[str, list[int]] = {}
    for i, sid in enumerate(subject_ids):
        order.setdefault(sid, []).append(i)
    subjects = sorted(order)
    rng.shuffle(subjects)
    return [np.asarray(order[s], dtype=np.int64) for s in subjects]


def split(plan: SplitPlan, n_rows: int, subject_ids: list[str] | None = None):
    """Seeded shuffle, then partition per the plan."""
    plan.validate()
    rng = np.random.default_rng(plan.seed)

    if plan.grouping == "by_subject":
        if subject_ids is None:
            raise DataError("by_subject grouping needs subject ids")
        blocks = _group_order(subject_ids, rng)
    else:
        perm = rng.permutation(n_rows)
        blocks = [np.asarray([i]) for i in perm]

    if plan.kind == "holdout_60_20_20":
        if n_rows < 5:
            raise DataError("holdout split needs at least 5 rows")
        n_train = round(0.6 * n_rows)
        n_val = round(0.2 * n_rows)
        parts: list[list[np.ndarray]] = [[], [], []]
        counts = [0, 0, 0]
        targets = [n_train, n_val, n_rows - n_train - n_val]
        part = 0
        for b in blocks:
            # advance when the current part has met its target; the last
            # part absorbs the remainder
            while part < 2 and counts[part] >= targets[part]:
                part += 1
            parts[part].append(b)
            counts[part] += len(b)
        return HoldoutSplit(
            train=np.concatenate(parts[0]) if parts[0] else np.empty(0, dtype=np.int64),
            val=np.concatenate(parts[1]) if parts[1] else np.empty(0, dtype=np.int64),
            test=np.concatenate(parts[2]) if parts[2] else np.empty(0, dtype=np.int64),
        )

    # kfold
    if n_rows < plan.k:
        raise DataError(f"k-fold needs at least k={plan.k} rows")
    if plan.grouping == "by_row":
        flat = np.concatenate(blocks)
        sizes = [n_rows // plan.k + (1 if i < n_rows % plan.k else 0) for i in range(plan.k)]
        folds = []
        at = 0
        for s in sizes:
            folds.append(flat[at : at + s])
            at += s
        return KFoldSplit(folds=folds)
    # by_subject: greedily fill the currently-smallest fold
    if len(blocks) < plan.k:
        raise DataError(f"k-fold by subject needs at least k={plan.k} subjects")
    folds_blocks: list[list[np.ndarray]] = [[] for _ in range(plan.k)]
    counts = [0] * plan.k
    for b in blocks:
        j = int(np.argmin(counts))
        folds_blocks[j].append(b)
        counts[j] += len(b)
    return KFoldSplit(folds=[np.concatenate(fb) for fb in folds_blocks])


# ---------------------------------------------------------------------------
# Metrics


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise DataError("mse needs equal, nonzero-length inputs")
    return float(np.mean((y_pred - y_true) ** 2))


def r2(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise DataError("r2 needs equal, nonzero-length inputs")
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise NumericError("r2 undefined: zero-variance ground truth")
    ss_res = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


@dataclass
class Histogram:
    bin_width: float
    edges: np.ndarray
    counts: np.ndarray

    def as_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "edges": [float(e) for e in self.edges],
            "counts": [int(c) for c in self.counts],
        }


def error_histogram(errors, bin_width: float = 1.0) -> Histogram:
    """Histogram of signed errors with the bin grid centered on zero.

    Bin k spans [(k - 0.5) w, (k + 0.5) w), so zero is a bin center.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise DataError("cannot histogram zero errors")
    if bin_width <= 0:
        raise DataError("bin width must be positive")
    k = np.floor(errors / bin_width + 0.5).astype(np.int64)
    k_min, k_max = int(k.min()), int(k.max())
    counts = np.bincount(k - k_min, minlength=k_max - k_min + 1)
    edges = (np.arange(k_min, k_max + 2) - 0.5) * bin_width
    return Histogram(bin_width=bin_width, edges=edges, counts=counts)


@dataclass
class EvalReport:
    model_kind: str
    mse: float
    r2: float
    ids: list[str]
    y_true: list[float]
    y_pred: list[float]
    histogram: Histogram
    per_fold: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "mse": self.mse,
            "r2": self.r2,
            "per_row": [
                {"id": i, "true": t, "predicted": p}
                for i, t, p in zip(self.ids, self.y_true, self.y_pred)
            ],
            "histogram": self.histogram.as_dict(),
            "per_fold": self.per_fold,
        }


def make_report(
    model_kind: str,
    ids: list[str],
    y_true,
    y_pred,
    bin_width: float = 1.0,
    per_fold: list[dict] | None = None,
) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    return EvalReport(
        model_kind=model_kind,
        mse=mse(y_true, y_pred),
        r2=r2(y_true, y_pred),
        ids=list(ids),
        y_true=[float(v) for v in y_true],
        y_pred=[float(v) for v in y_pred],
        histogram=error_histogram(y_pred - y_true, bin_width),
        per_fold=per_fold or [],
    )


# ---------------------------------------------------------------------------
# Feature correlation (explainability report)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    den = float(np.sqrt((xc**2).sum() * (yc**2).sum()))
    if den == 0.0:
        raise NumericError("pearson undefined for zero-variance input")
    return float((xc * yc).sum() / den)


def _rank(x: np.ndarray) -> np.ndarray:
    # average ranks for ties
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    return pearson(_rank(np.asarray(x, dtype=np.float64)), _rank(np.asarray(y, dtype=np.float64)))


@dataclass
class CorrelationReport:
    target: str  # "age" or "smoker"
    method: str
    entries: list[tuple[str, float]]
    excluded: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "method": self.method,
            "correlations": [{"feature": f, "r": r_} for f, r_ in self.entries],
            "excluded_zero_variance": self.excluded,
        }


def pearson_matrix(
    table: FeatureTable, target: str = "age", method: str = "pearson"
) -> CorrelationReport:
    """Correlation of every predictor (plus derived heart rate) with the
    target; zero-variance features are reported as undefined and excluded."""
    if table.n_rows < 3:
        raise DataError("correlation needs at least 3 rows")
    if target == "age":
        t = table.age
    elif target == "smoker":
        t = table.smoker
    else:
        raise DataError(f"unknown correlation target {target!r}")
    corr = {"pearson": pearson, "spearman": spearman}.get(method)
    if corr is None:
        raise DataError(f"unknown correlation method {method!r}")
    if float(np.std(t)) == 0.0:
        raise NumericError(f"target {target!r} has zero variance")

    entries = []
    excluded = []
    names = list(table.columns) + ["heart_rate_bpm"]
    for name in names:
        if target == "smoker" and name == "smoker":
            continue  # the target itself
        x = table.heart_rate_bpm() if name == "heart_rate_bpm" else table.column(name)
        if float(np.std(x)) == 0.0:
            excluded.append(name)
            continue
        entries.append((name, corr(x, t)))
    return CorrelationReport(target=target, method=method, entries=entries, excluded=excluded)


# ---------------------------------------------------------------------------
# Smoker vs non-smoker group statistics


@dataclass
class GroupStatsEntry:
    feature: str
    mean_smoker: float
    std_smoker: float
    mean_nonsmoker: float
    std_nonsmoker: float
    smd: float  # standardized mean difference (smoker - nonsmoker)


@dataclass
class GroupStatsReport:
    entries: list[GroupStatsEntry]  # ranked by |smd|, descending
    n_smokers: int
    n_nonsmokers: int

    def as_dict(self) -> dict:
        return {
            "n_smokers": self.n_smokers,
            "n_nonsmokers": self.n_nonsmokers,
            "features": [
                {
                    "feature": e.feature,
                    "mean_smoker": e.mean_smoker,
                    "std_smoker": e.std_smoker,
                    "mean_nonsmoker": e.mean_nonsmoker,
                    "std_nonsmoker": e.std_nonsmoker,
                    "smd": e.smd,
                }
                for e in self.entries
            ],
        }


#: Demographic features included in the group report; smoker and sex are
#: group labels, not outcomes.
GROUP_STATS_DEMOGRAPHICS = tuple(
    c for c in DEMOGRAPHIC_COLUMNS if c not in ("smoker", "sex", "family_history")
)


def group_stats(table: FeatureTable) -> GroupStatsReport:
    """Per-feature class means/stds and Cohen-style pooled-std effect size."""
    is_smoker = table.smoker > 0.5
    n_s = int(is_smoker.sum())
    n_n = int((~is_smoker).sum())
    if n_s == 0 or n_n == 0:
        raise DataError("group statistics need both smokers and non-smokers")

    entries = []
    names = list(ECG_FEATURE_COLUMNS) + list(GROUP_STATS_DEMOGRAPHICS) + ["heart_rate_bpm"]
    for name in names:
        x = table.heart_rate_bpm() if name == "heart_rate_bpm" else table.column(name)
        xs, xn = x[is_smoker], x[~is_smoker]
        ddof_s = 1 if n_s > 1 else 0
        ddof_n = 1 if n_n > 1 else 0
        var_s = float(xs.var(ddof=ddof_s))
        var_n = float(xn.var(ddof=ddof_n))
        pooled = np.sqrt(((n_s - 1) * var_s + (n_n - 1) * var_n) / max(1, n_s + n_n - 2))
        diff = float(xs.mean() - xn.mean())
        smd = diff / pooled if pooled > 0 else 0.0
        entries.append(
            GroupStatsEntry(
                feature=name,
                mean_smoker=float(xs.mean()),
                std_smoker=float(np.sqrt(var_s)),
                mean_nonsmoker=float(xn.mean()),
                std_nonsmoker=float(np.sqrt(var_n)),
                smd=float(smd),
            )
        )
    entries.sort(key=lambda e: (-abs(e.smd), e.feature))
    return GroupStatsReport(entries=entries, n_smokers=n_s, n_nonsmokers=n_n)
