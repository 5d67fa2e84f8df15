"""R-peak detection and P/QRS/T onset-peak-offset delineation.

The R detector is a derivative-energy detector: band-limit to the QRS
band, differentiate, square, integrate over a moving window, threshold
adaptively, and snap each candidate to the nearest extremum of the clean
signal.  Wave boundaries come from a dyadic (a-trous) multiscale slope
decomposition: QRS onset/offset are where the slope magnitude at the QRS
scale drops below a fraction of its in-complex maximum, and P/T limits are
where the signal returns to within a fraction of the peak-to-baseline
amplitude.  All thresholds and windows are config-exposed; the defaults
below are what the synthetic-oracle acceptance runs with.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from .errors import DataError
from .preprocess import CleanRecording

FIDUCIAL_NAMES = (
    "p_onset",
    "p_peak",
    "p_offset",
    "qrs_onset",
    "r_peak",
    "qrs_offset",
    "t_onset",
    "t_peak",
    "t_offset",
)


@dataclass
class FiducialSet:
    """Sample indices of one cycle's fiducials; absent waves carry None."""

    r_peak: int
    p_onset: int | None = None
    p_peak: int | None = None
    p_offset: int | None = None
    qrs_onset: int | None = None
    qrs_offset: int | None = None
    t_onset: int | None = None
    t_peak: int | None = None
    t_offset: int | None = None

    def present(self) -> list[tuple[str, int]]:
        out = []
        for name in FIDUCIAL_NAMES:
            v = getattr(self, name)
            if v is not None:
                out.append((name, int(v)))
        return out

    def ordered(self) -> bool:
        values = [v for _, v in self.present()]
        return all(a < b for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class DelineatorConfig:
    # R-peak detector
    band_low_hz: float = 5.0
    band_high_hz: float = 15.0
    band_order: int = 2
    integration_ms: float = 150.0
    threshold_fraction: float = 0.4
    energy_history: int = 8
    refractory_ms: float = 250.0
    snap_ms: float = 50.0
    bootstrap_s: float = 2.5
    # wave delineation
    wavelet_levels: int = 4
    qrs_detail_level: int = 2
    qrs_slope_fraction: float = 0.10
    qrs_search_ms: float = 60.0
    qrs_extent_ms: float = 150.0
    # Local-baseline window before QRS onset.  Wide enough that the median
    # sits on the isoelectric level even when the P wave covers part of it.
    baseline_window_ms: tuple[float, float] = (250.0, 10.0)
    t_start_after_qrs_ms: float = 80.0
    t_end_rr_fraction: float = 0.6
    p_search_back_ms: float = 300.0
    p_gap_before_qrs_ms: float = 20.0
    # P onset is searched at most this far before the P peak, which keeps
    # the walk out of the previous cycle's T wave at short RR.
    p_extent_ms: float = 120.0
    onset_return_fraction: float = 0.05
    min_wave_amplitude: float = 0.05


# ---------------------------------------------------------------------------
# Dyadic a-trous slope decomposition


def _conv_same_reflect(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    half = len(kernel) // 2
    padded = np.pad(x, half, mode="reflect")
    return np.convolve(padded, kernel, mode="valid")


def _upsample(kernel: np.ndarray, step: int) -> np.ndarray:
    if step == 1:
        return kernel
    out = np.zeros((len(kernel) - 1) * step + 1)
    out[::step] = kernel
    return out


_SMOOTH = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_DERIV = np.array([0.5, 0.0, -0.5])


def dyadic_slope_details(x: np.ndarray, levels: int = 4) -> list[np.ndarray]:
    """Multiscale centered-slope signals at dyadic scales 2^1 .. 2^levels.

    Symmetric kernels keep every level zero-phase, so extrema of a detail
    align with maximum-slope points of the input at that scale and zero
    crossings align with wave peaks.
    """
    details = []
    approx = np.asarray(x, dtype=np.float64)
    for level in range(1, levels + 1):
        step = 2 ** (level - 1)
        details.append(_conv_same_reflect(approx, _upsample(_DERIV, step)))
        approx = _conv_same_reflect(approx, _upsample(_SMOOTH, step))
    return details


# ---------------------------------------------------------------------------
# R-peak detection


def detect_r_peaks(clean: CleanRecording, config: DelineatorConfig | None = None) -> np.ndarray:
    """Locate R peaks; raises DataError when fewer than 2 are found."""
    config = config or DelineatorConfig()
    fs = clean.sampling_rate_hz
    x = clean.samples

    sos = sp_signal.butter(
        config.band_order,
        [config.band_low_hz, config.band_high_hz],
        btype="bandpass",
        fs=fs,
        output="sos",
    )
    band = sp_signal.sosfilt(sos, x)
    band = sp_signal.sosfilt(sos, band[::-1])[::-1]  # zero phase keeps timing
    deriv = np.gradient(band)
    win = max(1, int(round(config.integration_ms * fs / 1000.0)))
    energy = _conv_same_reflect(deriv**2, np.ones(win) / win)

    refractory = int(round(config.refractory_ms * fs / 1000.0))
    # distance pruning realizes the refractory period: of two energy peaks
    # closer than 250 ms the larger one survives
    candidates, _ = sp_signal.find_peaks(energy, distance=max(1, refractory))
    boot = energy[: max(1, int(round(config.bootstrap_s * fs)))]
    bootstrap_thr = config.threshold_fraction * float(boot.max())

    history: deque[float] = deque(maxlen=config.energy_history)
    accepted: list[int] = []
    for c in candidates:
        thr = (
            config.threshold_fraction * float(np.median(history))
            if history
            else bootstrap_thr
        )
        if energy[c] < thr:
            continue
        if accepted and c - accepted[-1] < refractory:
            continue
        accepted.append(int(c))
        history.append(float(energy[c]))

    snap = int(round(config.snap_ms * fs / 1000.0))
    snapped = []
    for c in accepted:
        lo = max(0, c - snap)
        hi = min(len(x), c + snap + 1)
        seg = x[lo:hi]
        base = float(np.median(seg))
        snapped.append(lo + int(np.argmax(np.abs(seg - base))))

    peaks: list[int] = []
    for p in sorted(set(snapped)):
        if peaks and p - peaks[-1] < refractory:
            continue
        peaks.append(p)
    if len(peaks) < 2:
        raise DataError(
            f"{clean.subject_id}: fewer than 2 R peaks detected; recording unusable"
        )
    return np.asarray(peaks, dtype=np.int64)


# ---------------------------------------------------------------------------
# Wave delineation


def _largest_extremum(absseg: np.ndarray) -> int | None:
    """Index of the largest interior local maximum of |signal - baseline|.

    Window-edge maxima are boundary artifacts (e.g. the filtered QRS foot),
    not wave peaks, so they do not count.
    """
    if len(absseg) < 3:
        return None
    mid, left, right = absseg[1:-1], absseg[:-2], absseg[2:]
    is_max = ((mid >= left) & (mid > right)) | ((mid > left) & (mid >= right))
    idxs = np.where(is_max)[0] + 1
    if len(idxs) == 0:
        return None
    return int(idxs[np.argmax(absseg[idxs])])


def _walk_below(values: np.ndarray, start: int, stop: int, step: int, thr: float) -> int:
    """First index from start (exclusive) toward stop where |values| < thr.

    When nothing crosses inside the span (adjacent waves merge before the
    signal fully returns), the boundary is the closest approach instead.
    """
    best_i, best_v = stop, np.inf
    i = start + step
    while (step > 0 and i <= stop) or (step < 0 and i >= stop):
        v = abs(values[i])
        if v < thr:
            return i
        if v < best_v:
            best_v, best_i = v, i
        i += step
    return best_i


def delineate_cycles(
    clean: CleanRecording,
    r_peaks: np.ndarray,
    config: DelineatorConfig | None = None,
) -> list[FiducialSet]:
    """Delineate every cycle with a full P-to-T span inside the recording.

    Cycles at the edges that cannot fit their search windows are dropped
    rather than partially delineated.
    """
    config = config or DelineatorConfig()
    if len(r_peaks) < 2:
        raise DataError("delineation needs at least 2 R peaks")
    fs = clean.sampling_rate_hz
    x = clean.samples
    n = len(x)

    def ms(v: float) -> int:
        return int(round(v * fs / 1000.0))

    details = dyadic_slope_details(x, config.wavelet_levels)
    d = details[config.qrs_detail_level - 1]

    qrs_win = ms(config.qrs_search_ms)
    qrs_extent = ms(config.qrs_extent_ms)
    base_lo_ms, base_hi_ms = config.baseline_window_ms
    frac = config.onset_return_fraction

    out: list[FiducialSet] = []
    for k, r in enumerate(np.asarray(r_peaks, dtype=int)):
        if k + 1 < len(r_peaks):
            rr = int(r_peaks[k + 1] - r)
        else:
            rr = int(r - r_peaks[k - 1])

        if r - qrs_win < 0 or r + qrs_win >= n:
            continue

        # QRS limits from the slope detail at the QRS scale
        qseg = np.abs(d[r - qrs_win : r + qrs_win + 1])
        thr = config.qrs_slope_fraction * float(qseg.max())
        pre = (r - qrs_win) + int(np.argmax(qseg[: qrs_win + 1]))
        post = r + int(np.argmax(qseg[qrs_win:]))
        qrs_onset = _walk_below(d, pre, max(0, r - qrs_extent), -1, thr)
        qrs_offset = _walk_below(d, post, min(n - 1, r + qrs_extent), +1, thr)

        base_lo = qrs_onset - ms(base_lo_ms)
        base_hi = qrs_onset - ms(base_hi_ms)
        p_lo = r - ms(config.p_search_back_ms)
        t_hi = qrs_offset + int(round(config.t_end_rr_fraction * rr))
        if base_lo < 0 or p_lo < 0 or t_hi >= n:
            continue  # edge cycle lacking a full span
        baseline = float(np.median(x[base_lo : base_hi + 1]))

        fid = FiducialSet(r_peak=int(r), qrs_onset=int(qrs_onset), qrs_offset=int(qrs_offset))

        # T wave
        t_lo = qrs_offset + ms(config.t_start_after_qrs_ms)
        if t_lo <= t_hi:
            seg = np.abs(x[t_lo : t_hi + 1] - baseline)
            rel = _largest_extremum(seg)
            if rel is not None and float(seg[rel]) >= config.min_wave_amplitude:
                t_peak = t_lo + rel
                ret = frac * float(seg[rel])
                fid.t_peak = t_peak
                fid.t_onset = _walk_below(x - baseline, t_peak, qrs_offset + 1, -1, ret)
                fid.t_offset = _walk_below(
                    x - baseline, t_peak, min(n - 1, r + rr), +1, ret
                )

        # P wave
        p_hi = qrs_onset - ms(config.p_gap_before_qrs_ms)
        if p_hi > p_lo:
            seg = np.abs(x[p_lo : p_hi + 1] - baseline)
            rel = _largest_extremum(seg)
            if rel is not None and float(seg[rel]) >= config.min_wave_amplitude:
                p_peak = p_lo + rel
                ret = frac * float(seg[rel])
                fid.p_peak = p_peak
                fid.p_onset = _walk_below(
                    x - baseline, p_peak, max(0, p_peak - ms(config.p_extent_ms)), -1, ret
                )
                fid.p_offset = _walk_below(x - baseline, p_peak, qrs_onset - 1, +1, ret)

        if not fid.ordered():
            # Overlapping waves: keep the QRS, drop the offending wave.
            fid.p_onset = fid.p_peak = fid.p_offset = None
            if not fid.ordered():
                continue
        out.append(fid)
    return out


def delineate(
    clean: CleanRecording, config: DelineatorConfig | None = None
) -> list[FiducialSet]:
    """Detect R peaks, then delineate; the usual entry point."""
    config = config or DelineatorConfig()
    return delineate_cycles(clean, detect_r_peaks(clean, config), config)


# ---------------------------------------------------------------------------
# Fiducial CSV format: cycle_index,fiducial_name,sample_index


def write_fiducials_csv(fiducials: list[FiducialSet], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle_index", "fiducial_name", "sample_index"])
        for i, fid in enumerate(fiducials):
            for name, value in fid.present():
                writer.writerow([i, name, value])


def read_fiducials_csv(path: Path | str) -> list[FiducialSet]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"fiducial file not found: {path}")
    rows: dict[int, dict[str, int]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                idx = int(row["cycle_index"])
                name = row["fiducial_name"]
                value = int(row["sample_index"])
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{path}: malformed fiducial row {row!r}") from None
            if name not in FIDUCIAL_NAMES:
                raise DataError(f"{path}: unknown fiducial {name!r}")
            rows.setdefault(idx, {})[name] = value
    out = []
    for idx in sorted(rows):
        fields = rows[idx]
        if "r_peak" not in fields:
            raise DataError(f"{path}: cycle {idx} lacks r_peak")
        out.append(FiducialSet(**fields))
    return out
