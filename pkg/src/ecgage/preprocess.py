"""Denoising, detrending, normalization, and cycle-aligned anomaly excision.

Stage order is fixed: low-pass filter -> two-stage median baseline removal
-> z-score -> (delineation) -> cycle-aligned excision.  Filtering defaults
to zero-phase so fiducial timing downstream is not skewed by phase delay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import ndimage, signal

from .errors import DataError, NumericError
from .ingest import EcgRecording

if TYPE_CHECKING:
    from .delineate import FiducialSet


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "butterworth_lowpass"
    order: int = 3
    cutoff_hz: float = 18.0
    sampling_rate_hz: float = 100.0

    def validate(self) -> None:
        if self.kind != "butterworth_lowpass":
            raise DataError(f"unsupported filter kind {self.kind!r}")
        if self.order < 1:
            raise DataError("filter order must be >= 1")
        if not 0 < self.cutoff_hz < self.sampling_rate_hz / 2:
            raise NumericError(
                f"cutoff {self.cutoff_hz} Hz must lie below Nyquist "
                f"({self.sampling_rate_hz / 2} Hz)"
            )


@dataclass(frozen=True)
class BaselineSpec:
    """Two-stage median filter windows: stage 1 spans the QRS, stage 2 the
    T wave, the classical choice for baseline-wander estimation."""

    stage1_window_ms: float = 200.0
    stage2_window_ms: float = 600.0

    def window_samples(self, fs: float) -> tuple[int, int]:
        if not 0 < self.stage1_window_ms < self.stage2_window_ms:
            raise DataError("baseline windows must satisfy 0 < stage1 < stage2")
        w1 = int(round(self.stage1_window_ms * fs / 1000.0)) | 1  # force odd
        w2 = int(round(self.stage2_window_ms * fs / 1000.0)) | 1
        if w1 >= w2:
            raise DataError("baseline windows collapse at this sampling rate")
        return w1, w2


@dataclass(frozen=True)
class AnomalySpec:
    """Thresholds for the automatic stand-in for manual anomaly marking."""

    flat_run_ms: float = 50.0
    excursion_sigma: float = 6.0


@dataclass
class CleanRecording:
    """A preprocessed trace plus the provenance needed to reproduce it."""

    subject_id: str
    sampling_rate_hz: float
    samples: np.ndarray
    validity_mask: np.ndarray
    raw_samples: np.ndarray
    filter_spec: FilterSpec
    baseline_spec: BaselineSpec
    filter_mode: str
    norm_mean: float
    norm_std: float

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def provenance(self) -> dict:
        return {
            "filter": {
                "kind": self.filter_spec.kind,
                "order": self.filter_spec.order,
                "cutoff_hz": self.filter_spec.cutoff_hz,
                "sampling_rate_hz": self.filter_spec.sampling_rate_hz,
                "mode": self.filter_mode,
            },
            "baseline": {
                "stage1_window_ms": self.baseline_spec.stage1_window_ms,
                "stage2_window_ms": self.baseline_spec.stage2_window_ms,
            },
            "normalization": {"mean": self.norm_mean, "std": self.norm_std},
        }


def design_lowpass(spec: FilterSpec) -> np.ndarray:
    """Digital Butterworth low-pass as second-order sections.

    Designed via the bilinear transform with frequency prewarping, so the
    -3 dB point lands exactly on the requested cutoff and DC gain is 1.
    """
    spec.validate()
    return signal.butter(
        spec.order, spec.cutoff_hz, btype="lowpass", fs=spec.sampling_rate_hz, output="sos"
    )


def sos_response(sos: np.ndarray, freqs_hz: np.ndarray | list, fs: float) -> np.ndarray:
    """Complex frequency response of an SOS cascade at the given frequencies."""
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=float) / fs
    z = np.exp(-1j * w)
    h = np.ones_like(z, dtype=complex)
    for b0, b1, b2, a0, a1, a2 in np.atleast_2d(sos):
        h *= (b0 + b1 * z + b2 * z**2) / (a0 + a1 * z + a2 * z**2)
    return h


def apply_filter(samples: np.ndarray, sos: np.ndarray, mode: str = "zero_phase") -> np.ndarray:
    """Run the SOS cascade over the samples with zero initial state.

    ``forward`` is a single direct-form pass; ``zero_phase`` filters
    forward, reverses, filters again, and reverses back, which squares the
    magnitude response and cancels the phase.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot filter an empty recording")
    if mode == "forward":
        return signal.sosfilt(sos, x)
    if mode == "zero_phase":
        y = signal.sosfilt(sos, x)
        return signal.sosfilt(sos, y[::-1])[::-1]
    raise DataError(f"unknown filter mode {mode!r}")


def remove_baseline(samples: np.ndarray, spec: BaselineSpec, fs: float) -> np.ndarray:
    """Subtract the two-stage median-filter baseline estimate.

    Edges are handled by reflecting the signal (edge sample included).
    """
    x = np.asarray(samples, dtype=np.float64)
    w1, w2 = spec.window_samples(fs)
    if len(x) <= w2:
        raise DataError(
            f"recording ({len(x)} samples) shorter than the stage-2 window ({w2})"
        )
    baseline = ndimage.median_filter(x, size=w1, mode="reflect")
    baseline = ndimage.median_filter(baseline, size=w2, mode="reflect")
    return x - baseline


def zscore(samples: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, float, float]:
    """Normalize to zero mean, unit population std over valid samples.

    Invalid samples pass through the same affine map but stay masked.
    """
    x = np.asarray(samples, dtype=np.float64)
    m = np.ones(len(x), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    valid = x[m]
    if valid.size < 2:
        raise DataError("z-score needs at least 2 valid samples")
    mean = float(valid.mean())
    std = float(valid.std())
    if std == 0.0:
        raise NumericError("zero variance input: z-score undefined")
    return (x - mean) / std, mean, std


def _fill_masked(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Linearly interpolate masked samples so IIR filtering stays finite.

    Filled values remain masked; cycle-aligned excision removes their
    cycles later.
    """
    if mask.all():
        return x
    if not mask.any():
        raise DataError("recording has no valid samples")
    idx = np.arange(len(x))
    out = x.copy()
    out[~mask] = np.interp(idx[~mask], idx[mask], x[mask])
    return out


def preprocess_recording(
    recording: EcgRecording,
    filter_spec: FilterSpec | None = None,
    baseline_spec: BaselineSpec | None = None,
    mode: str = "zero_phase",
) -> CleanRecording:
    """Full preprocessing chain: low-pass, detrend, z-score."""
    filter_spec = filter_spec or FilterSpec(sampling_rate_hz=recording.sampling_rate_hz)
    baseline_spec = baseline_spec or BaselineSpec()
    if filter_spec.sampling_rate_hz != recording.sampling_rate_hz:
        raise DataError(
            f"{recording.subject_id}: filter designed for "
            f"{filter_spec.sampling_rate_hz} Hz but recording is at "
            f"{recording.sampling_rate_hz} Hz"
        )
    filled = _fill_masked(recording.samples, recording.validity_mask)
    sos = design_lowpass(filter_spec)
    filtered = apply_filter(filled, sos, mode=mode)
    detrended = remove_baseline(filtered, baseline_spec, recording.sampling_rate_hz)
    normalized, mean, std = zscore(detrended, recording.validity_mask)
    return CleanRecording(
        subject_id=recording.subject_id,
        sampling_rate_hz=recording.sampling_rate_hz,
        samples=normalized,
        validity_mask=recording.validity_mask.copy(),
        raw_samples=recording.samples,
        filter_spec=filter_spec,
        baseline_spec=baseline_spec,
        filter_mode=mode,
        norm_mean=mean,
        norm_std=std,
    )


# ---------------------------------------------------------------------------
# Cycle-aligned anomaly excision


@dataclass
class ExcisionReport:
    total_cycles: int
    masked_cycles: int
    flagged_samples: int
    unusable: bool


def _flat_runs(raw: np.ndarray, min_run: int) -> np.ndarray:
    """Boolean mask of samples inside runs of >= min_run identical values."""
    flag = np.zeros(len(raw), dtype=bool)
    if len(raw) < min_run:
        return flag
    same = np.concatenate(([False], raw[1:] == raw[:-1]))
    # run-length encode the `same` chain; a run of k identical samples
    # produces k-1 consecutive True values in `same`
    start = 0
    i = 1
    n = len(raw)
    while i <= n:
        if i == n or not same[i]:
            if i - start >= min_run:
                flag[start:i] = True
            start = i
        i += 1
    return flag


def _anomalous_samples(clean: CleanRecording, spec: AnomalySpec) -> np.ndarray:
    fs = clean.sampling_rate_hz
    min_run = max(2, int(round(spec.flat_run_ms * fs / 1000.0)))
    raw = clean.raw_samples
    bad = _flat_runs(raw, min_run)
    bad |= np.isnan(raw)
    bad |= ~clean.validity_mask
    bad |= np.abs(clean.samples) > spec.excursion_sigma
    return bad


def excise_anomalies(
    clean: CleanRecording,
    fiducials: "list[FiducialSet]",
    spec: AnomalySpec | None = None,
) -> tuple[CleanRecording, ExcisionReport]:
    """Mask whole cardiac cycles that contain any anomalous sample.

    A cycle spans from its P onset to the next cycle's P onset (falling
    back to the earliest present fiducial when P is absent); the last
    cycle's span runs to the end of the recording.  Masking only ever
    extends the existing mask.
    """
    spec = spec or AnomalySpec()
    bad = _anomalous_samples(clean, spec)
    n = clean.n_samples

    def anchor(f) -> int:
        for name in ("p_onset", "qrs_onset", "r_peak"):
            v = getattr(f, name)
            if v is not None:
                return int(v)
        raise DataError("fiducial set without any onset or peak")

    starts = [anchor(f) for f in fiducials]
    spans = [
        (starts[i], starts[i + 1] if i + 1 < len(starts) else n)
        for i in range(len(starts))
    ]

    mask = clean.validity_mask.copy()
    masked_cycles = 0
    for lo, hi in spans:
        lo = max(0, lo)
        hi = min(n, hi)
        if hi > lo and bad[lo:hi].any():
            mask[lo:hi] = False
            masked_cycles += 1

    report = ExcisionReport(
        total_cycles=len(spans),
        masked_cycles=masked_cycles,
        flagged_samples=int(bad.sum()),
        unusable=masked_cycles == len(spans) and len(spans) > 0,
    )
    out = CleanRecording(
        subject_id=clean.subject_id,
        sampling_rate_hz=clean.sampling_rate_hz,
        samples=clean.samples,
        validity_mask=mask,
        raw_samples=clean.raw_samples,
        filter_spec=clean.filter_spec,
        baseline_spec=clean.baseline_spec,
        filter_mode=clean.filter_mode,
        norm_mean=clean.norm_mean,
        norm_std=clean.norm_std,
    )
    return out, report
