"""The 13 ECG features, their per-scope aggregation, and model-input rows.

Interval features are computed per cardiac cycle from the fiducials, in
milliseconds.  RMSSD and SDNN are computed once per scope (segment or full
recording) from that scope's RR series, never averaged per cycle.  The
corrected QT of a row is always recomputed from that row's own QT and RR,
so the Bazett identity QTc = QT / sqrt(RR in s) holds on every row.

Naming note: the literature uses "TP interval" and "PT interval"
interchangeably for the isoelectric gap from T offset to the next P onset;
this module calls it ``pt_ms``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .delineate import FiducialSet
from .errors import DataError, NumericError
from .ingest import SEX_ENCODING, SubjectMetadata
from .segment import Segment

#: The 13 ECG feature columns, in the documented CSV order.
ECG_FEATURE_COLUMNS = (
    "rr_ms",
    "qt_ms",
    "p_dur_ms",
    "pp_ms",
    "pt_ms",
    "pr_interval_ms",
    "t_dur_ms",
    "st_seg_ms",
    "qrs_ms",
    "pr_seg_ms",
    "qtc_ms",
    "rmssd_ms",
    "sdnn_ms",
)

#: The 8 demographic feature columns (numeric encoding per ingest.SEX_ENCODING).
DEMOGRAPHIC_COLUMNS = (
    "sex",
    "smoker",
    "bmi_kg_m2",
    "sleep_hours",
    "systolic_mmhg",
    "diastolic_mmhg",
    "resting_hr_bpm",
    "family_history",
)

PREDICTOR_COLUMNS = ECG_FEATURE_COLUMNS + DEMOGRAPHIC_COLUMNS  # 21 columns

#: Full CSV column order: 21 predictors, then targets and provenance.
CSV_COLUMNS = PREDICTOR_COLUMNS + ("age_years", "smoker_target", "subject_id", "segment_id")


@dataclass
class EcgFeatures:
    """One row of the 13 ECG features; missing operands leave None."""

    rr_ms: float | None = None
    qt_ms: float | None = None
    p_dur_ms: float | None = None
    pp_ms: float | None = None
    pt_ms: float | None = None
    pr_interval_ms: float | None = None
    t_dur_ms: float | None = None
    st_seg_ms: float | None = None
    qrs_ms: float | None = None
    pr_seg_ms: float | None = None
    qtc_ms: float | None = None
    rmssd_ms: float | None = None
    sdnn_ms: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def qtc(qt_ms: float, rr_ms: float) -> float:
    """Bazett correction: QT stays in ms, RR enters the root in seconds."""
    if rr_ms <= 0:
        raise NumericError("QTc needs a positive RR interval")
    return qt_ms / math.sqrt(rr_ms / 1000.0)


def hrv(rr_series_ms) -> tuple[float, float]:
    """(RMSSD, SDNN) of an RR series in ms.

    RMSSD needs at least 3 intervals, SDNN at least 2; SDNN uses the
    population standard deviation (config flag ``hrv_ddof`` switches).
    """
    return hrv_with_ddof(rr_series_ms, ddof=0)


def hrv_with_ddof(rr_series_ms, ddof: int = 0) -> tuple[float, float]:
    rr = np.asarray(rr_series_ms, dtype=np.float64)
    if rr.size < 3:
        raise DataError("RMSSD needs at least 3 RR intervals")
    diffs = np.diff(rr)
    rmssd = float(np.sqrt(np.mean(diffs**2)))
    sdnn = float(rr.std(ddof=ddof))
    return rmssd, sdnn


def sdnn_only(rr_series_ms, ddof: int = 0) -> float:
    rr = np.asarray(rr_series_ms, dtype=np.float64)
    if rr.size < 2:
        raise DataError("SDNN needs at least 2 RR intervals")
    return float(rr.std(ddof=ddof))


def _diff_ms(a: int | None, b: int | None, fs: float) -> float | None:
    if a is None or b is None:
        return None
    return (b - a) * 1000.0 / fs


def interval_features(fiducials: list[FiducialSet], fs: float) -> list[EcgFeatures]:
    """Per-cycle interval features; any feature with a missing operand is
    absent for that cycle.  RMSSD/SDNN are left for the aggregation scope."""
    if len(fiducials) < 2:
        raise DataError("interval features need at least 2 delineated cycles")
    out = []
    for i, f in enumerate(fiducials):
        nxt = fiducials[i + 1] if i + 1 < len(fiducials) else None
        feat = EcgFeatures(
            qt_ms=_diff_ms(f.qrs_onset, f.t_offset, fs),
            p_dur_ms=_diff_ms(f.p_onset, f.p_offset, fs),
            pr_interval_ms=_diff_ms(f.p_onset, f.qrs_onset, fs),
            pr_seg_ms=_diff_ms(f.p_offset, f.qrs_onset, fs),
            qrs_ms=_diff_ms(f.qrs_onset, f.qrs_offset, fs),
            st_seg_ms=_diff_ms(f.qrs_offset, f.t_onset, fs),
            t_dur_ms=_diff_ms(f.t_onset, f.t_offset, fs),
        )
        if nxt is not None:
            feat.rr_ms = _diff_ms(f.r_peak, nxt.r_peak, fs)
            feat.pp_ms = _diff_ms(f.p_peak, nxt.p_peak, fs)
            feat.pt_ms = _diff_ms(f.t_offset, nxt.p_onset, fs)
        if feat.qt_ms is not None and feat.rr_ms is not None:
            feat.qtc_ms = qtc(feat.qt_ms, feat.rr_ms)
        out.append(feat)
    return out


def rr_series_ms(fiducials: list[FiducialSet], fs: float) -> np.ndarray:
    """RR intervals between consecutive delineated cycles, in ms."""
    r = np.asarray([f.r_peak for f in fiducials], dtype=np.float64)
    return np.diff(r) * 1000.0 / fs


def aggregate(
    cycle_features: list[EcgFeatures],
    scope_rr_ms,
    hrv_ddof: int = 0,
) -> EcgFeatures:
    """Mean of each interval feature over cycles where it is present, plus
    scope-level RMSSD/SDNN, plus the QTc of the aggregated QT and RR."""
    if not cycle_features:
        raise DataError("cannot aggregate an empty scope")
    agg = EcgFeatures()
    for name in ECG_FEATURE_COLUMNS:
        if name in ("qtc_ms", "rmssd_ms", "sdnn_ms"):
            continue
        values = [getattr(c, name) for c in cycle_features]
        values = [v for v in values if v is not None]
        if values:
            setattr(agg, name, float(np.mean(values)))
    if agg.qt_ms is not None and agg.rr_ms is not None:
        agg.qtc_ms = qtc(agg.qt_ms, agg.rr_ms)
    rr = np.asarray(scope_rr_ms, dtype=np.float64)
    if rr.size >= 3:
        agg.rmssd_ms, agg.sdnn_ms = hrv_with_ddof(rr, ddof=hrv_ddof)
    elif rr.size >= 2:
        agg.sdnn_ms = sdnn_only(rr, ddof=hrv_ddof)
    return agg


def cycles_in_segment(fiducials: list[FiducialSet], seg: Segment) -> list[int]:
    """Indices of cycles whose R peak lies inside the segment."""
    return [
        i
        for i, f in enumerate(fiducials)
        if seg.start_sample <= f.r_peak < seg.end_sample
    ]


def segment_features(
    fiducials: list[FiducialSet],
    cycle_feats: list[EcgFeatures],
    seg: Segment,
    fs: float,
    hrv_ddof: int = 0,
) -> EcgFeatures | None:
    """Aggregate over one segment; None when no usable cycle lies inside."""
    idx = cycles_in_segment(fiducials, seg)
    if not idx:
        return None
    inside = set(idx)
    rr = [
        (fiducials[j + 1].r_peak - fiducials[j].r_peak) * 1000.0 / fs
        for j in idx
        if j + 1 in inside
    ]
    return aggregate([cycle_feats[j] for j in idx], rr, hrv_ddof=hrv_ddof)


# ---------------------------------------------------------------------------
# Model-input rows


@dataclass
class FeatureRow:
    subject_id: str
    segment_id: str  # integer index as text, or "full"
    values: dict[str, float]  # the 21 predictors
    age_years: float
    smoker: int


def encode_demographics(
    meta: SubjectMetadata, sex_encoding: dict[str, float] | None = None
) -> dict[str, float]:
    sex_encoding = sex_encoding or SEX_ENCODING
    return {
        "sex": sex_encoding[meta.sex],
        "smoker": 1.0 if meta.smoker else 0.0,
        "bmi_kg_m2": float(meta.bmi_kg_m2),
        "sleep_hours": float(meta.sleep_hours),
        "systolic_mmhg": float(meta.systolic_mmhg),
        "diastolic_mmhg": float(meta.diastolic_mmhg),
        "resting_hr_bpm": float(meta.resting_hr_bpm),
        "family_history": 1.0 if meta.family_history else 0.0,
    }


def assemble_rows(
    aggregates: list[tuple[str, str, EcgFeatures]],
    metadata: list[SubjectMetadata],
    sex_encoding: dict[str, float] | None = None,
) -> tuple[list[FeatureRow], int]:
    """Join ECG aggregates with demographics into 21-predictor rows.

    Rows with any missing predictor are dropped; the drop count is
    returned alongside so callers can report it.
    """
    by_id = {m.subject_id: m for m in metadata}
    rows = []
    dropped = 0
    for subject_id, segment_id, feats in aggregates:
        meta = by_id.get(subject_id)
        if meta is None:
            raise DataError(f"no metadata for subject {subject_id!r}")
        values: dict[str, float] = {}
        missing = False
        for name in ECG_FEATURE_COLUMNS:
            v = getattr(feats, name)
            if v is None or not math.isfinite(v):
                missing = True
                break
            values[name] = float(v)
        if missing:
            dropped += 1
            continue
        values.update(encode_demographics(meta, sex_encoding))
        rows.append(
            FeatureRow(
                subject_id=subject_id,
                segment_id=segment_id,
                values=values,
                age_years=float(meta.age_years),
                smoker=1 if meta.smoker else 0,
            )
        )
    return rows, dropped


@dataclass
class FeatureTable:
    """Column-major view of feature rows for the models and reports."""

    columns: tuple[str, ...]
    X: np.ndarray
    age: np.ndarray
    smoker: np.ndarray
    subject_ids: list[str]
    segment_ids: list[str]

    @classmethod
    def from_rows(cls, rows: list[FeatureRow]) -> "FeatureTable":
        if not rows:
            raise DataError("no feature rows to tabulate")
        X = np.asarray(
            [[r.values[c] for c in PREDICTOR_COLUMNS] for r in rows], dtype=np.float64
        )
        return cls(
            columns=PREDICTOR_COLUMNS,
            X=X,
            age=np.asarray([r.age_years for r in rows], dtype=np.float64),
            smoker=np.asarray([r.smoker for r in rows], dtype=np.float64),
            subject_ids=[r.subject_id for r in rows],
            segment_ids=[r.segment_id for r in rows],
        )

    @property
    def n_rows(self) -> int:
        return len(self.subject_ids)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def heart_rate_bpm(self) -> np.ndarray:
        """Derived analysis variable: instantaneous heart rate from RR."""
        return 60000.0 / self.column("rr_ms")

    def take(self, idx) -> "FeatureTable":
        idx = np.asarray(idx)
        return FeatureTable(
            columns=self.columns,
            X=self.X[idx],
            age=self.age[idx],
            smoker=self.smoker[idx],
            subject_ids=[self.subject_ids[i] for i in idx],
            segment_ids=[self.segment_ids[i] for i in idx],
        )


def write_feature_csv(rows: list[FeatureRow], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [repr(r.values[c]) for c in PREDICTOR_COLUMNS]
                + [repr(r.age_years), r.smoker, r.subject_id, r.segment_id]
            )


def read_feature_csv(path: Path | str) -> FeatureTable:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    rows: list[FeatureRow] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise DataError(f"{path}: unexpected feature CSV header")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CSV_COLUMNS):
                raise DataError(f"{path}:{lineno}: wrong column count")
            try:
                values = {c: float(v) for c, v in zip(PREDICTOR_COLUMNS, rec)}
                rows.append(
                    FeatureRow(
                        subject_id=rec[-2],
                        segment_id=rec[-1],
                        values=values,
                        age_years=float(rec[len(PREDICTOR_COLUMNS)]),
                        smoker=int(rec[len(PREDICTOR_COLUMNS) + 1]),
                    )
                )
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed feature row") from None
    return FeatureTable.from_rows(rows)
