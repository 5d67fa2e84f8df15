"""Synthetic single-lead ECG with analytically known fiducials.

Each cardiac cycle is a sum of five Gaussian components (P, Q, R, S, T)
placed on a jittered RR schedule.  Ground-truth onsets and offsets are the
+-2.5 sigma points of each component, so every fiducial an annotator could
mark is known exactly from the construction, independent of the rendered
waveform.  This is the oracle the delineation and feature stages are
verified against in place of real recordings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ingest
from .errors import DataError, NumericError

#: Onset/offset ground-truth convention: +-2.5 sigma around each component.
ONSET_OFFSET_SIGMA = 2.5

#: Rendering radius in sigmas.  Chosen at the double-precision underflow
#: point of exp(-z^2/2), so truncation never creates an artificial step:
#: beyond this radius the tail is exactly zero anyway.  Keeping the true
#: tails matters because inter-cycle samples must stay distinct values, as
#: they are in real recordings; runs of identical samples are an anomaly
#: signature downstream.
RENDER_SIGMA = 39.0


@dataclass(frozen=True)
class WaveParams:
    """One Gaussian component: center offset relative to R, in ms."""

    center_ms: float
    sigma_ms: float
    amplitude: float


def normal_waves() -> dict[str, WaveParams]:
    """Default morphology of a healthy young-adult lead-I cycle."""
    return {
        "P": WaveParams(-160.0, 22.0, 0.15),
        "Q": WaveParams(-25.0, 6.0, -0.10),
        "R": WaveParams(0.0, 10.0, 1.00),
        "S": WaveParams(25.0, 6.0, -0.20),
        "T": WaveParams(260.0, 36.0, 0.30),
    }


@dataclass
class SynthConfig:
    fs_hz: float = 100.0
    duration_s: float = 180.0
    mean_hr_bpm: float = 60.0
    hr_variability_ms: float = 0.0
    waves: dict[str, WaveParams] = field(default_factory=normal_waves)
    noise_snr_db: float | None = None
    baseline_drift: tuple[float, float] | None = None  # (amplitude, frequency_hz)
    seed: int = 0
    subject_id: str = "synth"
    first_r_s: float | None = None

    def active_span_ms(self) -> tuple[float, float]:
        """Earliest onset and latest offset of a cycle, relative to R (ms)."""
        lo = min(w.center_ms - ONSET_OFFSET_SIGMA * w.sigma_ms for w in self.waves.values())
        hi = max(w.center_ms + ONSET_OFFSET_SIGMA * w.sigma_ms for w in self.waves.values())
        return lo, hi

    def validate(self) -> None:
        if self.fs_hz <= 0 or self.duration_s <= 0 or self.mean_hr_bpm <= 0:
            raise DataError("fs, duration, and heart rate must be positive")
        for name in ("P", "Q", "R", "S", "T"):
            if name not in self.waves:
                raise DataError(f"wave component {name!r} missing from config")
            if self.waves[name].sigma_ms <= 0:
                raise DataError(f"wave component {name!r} must have positive width")
        centers = [self.waves[n].center_ms for n in ("P", "Q", "R", "S", "T")]
        if not all(a < b for a, b in zip(centers, centers[1:])):
            raise DataError("wave centers must be ordered P < Q < R < S < T")
        if self.waves["R"].amplitude == 0:
            raise DataError("R component must have nonzero amplitude")
        lo, hi = self.active_span_ms()
        rr_nominal = 60000.0 / self.mean_hr_bpm
        # Jitter is clipped at 3 sigma when drawn, so this bound is exact.
        if rr_nominal - 3.0 * self.hr_variability_ms <= hi - lo:
            raise NumericError(
                f"RR ({rr_nominal:.0f} ms - jitter) shorter than the cycle's "
                f"active span ({hi - lo:.0f} ms): adjacent cycles would overlap"
            )


@dataclass
class CycleAnnotation:
    """Ground-truth sample indices for one cycle; absent waves carry None."""

    r_peak: int
    p_onset: int | None = None
    p_peak: int | None = None
    p_offset: int | None = None
    qrs_onset: int | None = None
    qrs_offset: int | None = None
    t_onset: int | None = None
    t_peak: int | None = None
    t_offset: int | None = None


@dataclass
class SynthAnnotation:
    cycles: list[CycleAnnotation]
    rr_schedule_ms: np.ndarray  # planned RR intervals, length = n_cycles - 1

    @property
    def r_peaks(self) -> np.ndarray:
        return np.asarray([c.r_peak for c in self.cycles], dtype=np.int64)


def _render(config: SynthConfig, r_times_s: np.ndarray, n: int) -> np.ndarray:
    t = np.arange(n) / config.fs_hz
    signal = np.zeros(n)
    for r_s in r_times_s:
        for wave in config.waves.values():
            if wave.amplitude == 0.0:
                continue
            c = r_s + wave.center_ms / 1000.0
            s = wave.sigma_ms / 1000.0
            lo = max(0, int(np.floor((c - RENDER_SIGMA * s) * config.fs_hz)))
            hi = min(n, int(np.ceil((c + RENDER_SIGMA * s) * config.fs_hz)) + 1)
            if lo >= hi:
                continue
            u = t[lo:hi] - c
            signal[lo:hi] += wave.amplitude * np.exp(-0.5 * (u / s) ** 2)
    return signal


def _annotate(config: SynthConfig, r_times_s: np.ndarray) -> list[CycleAnnotation]:
    fs = config.fs_hz
    w = config.waves
    cycles = []
    for r_s in r_times_s:
        def sample(offset_ms: float) -> int:
            return int(round((r_s + offset_ms / 1000.0) * fs))

        ann = CycleAnnotation(r_peak=sample(w["R"].center_ms))
        if w["P"].amplitude != 0.0:
            ann.p_onset = sample(w["P"].center_ms - ONSET_OFFSET_SIGMA * w["P"].sigma_ms)
            ann.p_peak = sample(w["P"].center_ms)
            ann.p_offset = sample(w["P"].center_ms + ONSET_OFFSET_SIGMA * w["P"].sigma_ms)
        # QRS bounds come from the outermost present component of Q/R/S.
        first = w["Q"] if w["Q"].amplitude != 0.0 else w["R"]
        last = w["S"] if w["S"].amplitude != 0.0 else w["R"]
        ann.qrs_onset = sample(first.center_ms - ONSET_OFFSET_SIGMA * first.sigma_ms)
        ann.qrs_offset = sample(last.center_ms + ONSET_OFFSET_SIGMA * last.sigma_ms)
        if w["T"].amplitude != 0.0:
            ann.t_onset = sample(w["T"].center_ms - ONSET_OFFSET_SIGMA * w["T"].sigma_ms)
            ann.t_peak = sample(w["T"].center_ms)
            ann.t_offset = sample(w["T"].center_ms + ONSET_OFFSET_SIGMA * w["T"].sigma_ms)
        cycles.append(ann)
    return cycles


def generate(config: SynthConfig) -> tuple[ingest.EcgRecording, SynthAnnotation]:
    """Render a recording and its analytic annotation from one config."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    fs = config.fs_hz
    n = int(round(config.duration_s * fs))
    lo_ms, hi_ms = config.active_span_ms()
    rr_nominal = 60000.0 / config.mean_hr_bpm

    first_r = config.first_r_s
    if first_r is None:
        first_r = max(0.3, -lo_ms / 1000.0 + 0.02)
    last_r_limit = config.duration_s - hi_ms / 1000.0

    r_times = [first_r]
    rr_ms: list[float] = []
    while True:
        jitter = 0.0
        if config.hr_variability_ms > 0:
            jitter = float(
                np.clip(
                    rng.normal(0.0, config.hr_variability_ms),
                    -3.0 * config.hr_variability_ms,
                    3.0 * config.hr_variability_ms,
                )
            )
        rr = rr_nominal + jitter
        nxt = r_times[-1] + rr / 1000.0
        if nxt > last_r_limit:
            break
        r_times.append(nxt)
        rr_ms.append(rr)
    if len(r_times) < 2:
        raise DataError("duration too short for two cardiac cycles")
    r_times = np.asarray(r_times)

    signal = _render(config, r_times, n)
    if config.baseline_drift is not None:
        amp, freq = config.baseline_drift
        signal = signal + amp * np.sin(2.0 * np.pi * freq * np.arange(n) / fs)
    if config.noise_snr_db is not None:
        clean = _render(config, r_times, n)
        rms = float(np.sqrt(np.mean(clean**2)))
        sigma = rms * 10.0 ** (-config.noise_snr_db / 20.0)
        signal = signal + rng.normal(0.0, sigma, n)

    recording = ingest.EcgRecording(
        subject_id=config.subject_id,
        sampling_rate_hz=fs,
        samples=signal,
        validity_mask=np.ones(n, dtype=bool),
    )
    annotation = SynthAnnotation(
        cycles=_annotate(config, r_times),
        rr_schedule_ms=np.asarray(rr_ms),
    )
    return recording, annotation


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = noisy - clean
    return float(10.0 * np.log10(np.mean(clean**2) / np.mean(noise**2)))


# ---------------------------------------------------------------------------
# Cohort generation with planted feature -> age structure


@dataclass(frozen=True)
class AgeRule:
    """Deterministic map from a subject's latent (QT, HR) to an age label.

    age = base + qt_slope * (QT - qt_ref) + hr_step * 1[HR < hr_step_at]
          + noise, with noise std = noise_frac * std of the deterministic
    part over the cohort.  hr_step = 0 makes the rule purely linear.
    """

    base: float = 18.0
    qt_ref_ms: float = 360.0
    qt_slope: float = 8.0 / 60.0
    hr_step_at: float = 68.0
    hr_step: float = 4.0
    noise_frac: float = 0.1

    def deterministic_age(self, qt_ms: float, hr_bpm: float) -> float:
        age = self.base + self.qt_slope * (qt_ms - self.qt_ref_ms)
        if hr_bpm < self.hr_step_at:
            age += self.hr_step
        return age


@dataclass(frozen=True)
class SmokerRule:
    """How the smoker label shifts the waveform and metadata distributions.

    Directions mirror the smoking effects reported for habitual smokers:
    higher heart rate and systolic pressure, reduced RR variability.
    """

    rate: float = 20.0 / 42.0
    hr_shift_bpm: float = 5.0
    jitter_nonsmoker_ms: float = 32.0
    jitter_smoker_ms: float = 18.0
    systolic_shift_mmhg: float = 8.0
    p_sigma_shift_ms: float = 2.0
    bmi_shift: float = 1.5
    sleep_shift_h: float = -0.5


@dataclass
class CohortSubject:
    config: SynthConfig
    recording: ingest.EcgRecording
    annotation: SynthAnnotation
    metadata: ingest.SubjectMetadata


@dataclass
class Cohort:
    subjects: list[CohortSubject]
    dataset_name: str = "synthetic-cohort"
    version: str = "1"

    @property
    def metadata(self) -> list[ingest.SubjectMetadata]:
        return [s.metadata for s in self.subjects]


def make_cohort(
    n_subjects: int,
    age_rule: AgeRule | None = None,
    smoker_rule: SmokerRule | None = None,
    seed: int = 0,
    duration_s: float = 180.0,
    fs_hz: float = 100.0,
    noise_snr_db: float | None = None,
) -> Cohort:
    """Generate a cohort whose feature -> age relationship is known.

    Latent QT and heart rate are drawn per subject, the waveform is built
    from them, and the age label is the age rule applied to the same
    latents, so a correct pipeline can recover the rule from the signal.
    """
    if n_subjects < 2:
        raise DataError("cohort needs at least 2 subjects")
    age_rule = age_rule or AgeRule()
    smoker_rule = smoker_rule or SmokerRule()

    latents = []
    for i in range(n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        smoker = bool(rng.random() < smoker_rule.rate)
        hr = float(rng.uniform(56.0, 78.0)) + (smoker_rule.hr_shift_bpm if smoker else 0.0)
        # T-wave placement sets the QT interval; QRS onset stays fixed.
        qt_ms = float(rng.uniform(360.0, 420.0))
        latents.append((rng, smoker, hr, qt_ms))

    det_ages = np.asarray(
        [age_rule.deterministic_age(qt, hr) for (_, _, hr, qt) in latents]
    )
    age_sigma = float(det_ages.std())

    subjects = []
    for i, (rng, smoker, hr, qt_ms) in enumerate(latents):
        sid = f"s{i:03d}"
        waves = normal_waves()
        t_sigma = waves["T"].sigma_ms
        qrs_onset_ms = waves["Q"].center_ms - ONSET_OFFSET_SIGMA * waves["Q"].sigma_ms
        t_center = qt_ms + qrs_onset_ms - ONSET_OFFSET_SIGMA * t_sigma
        waves["T"] = replace(waves["T"], center_ms=t_center)
        if smoker and smoker_rule.p_sigma_shift_ms:
            waves["P"] = replace(
                waves["P"], sigma_ms=waves["P"].sigma_ms + smoker_rule.p_sigma_shift_ms
            )
        jitter = smoker_rule.jitter_smoker_ms if smoker else smoker_rule.jitter_nonsmoker_ms
        config = SynthConfig(
            fs_hz=fs_hz,
            duration_s=duration_s,
            mean_hr_bpm=hr,
            hr_variability_ms=jitter,
            waves=waves,
            noise_snr_db=noise_snr_db,
            seed=int(rng.integers(0, 2**63 - 1)),
            subject_id=sid,
        )
        recording, annotation = generate(config)

        age = det_ages[i]
        if age_rule.noise_frac > 0 and age_sigma > 0:
            age += float(rng.normal(0.0, age_rule.noise_frac * age_sigma))
        sex = "male" if rng.random() < 26.0 / 42.0 else "female"
        height = float(rng.uniform(155.0, 190.0))
        bmi = float(rng.uniform(19.0, 27.0)) + (smoker_rule.bmi_shift if smoker else 0.0)
        weight = bmi * (height / 100.0) ** 2
        systolic = float(rng.uniform(105.0, 125.0)) + (
            smoker_rule.systolic_shift_mmhg if smoker else 0.0
        )
        metadata = ingest.SubjectMetadata(
            subject_id=sid,
            age_years=int(round(age)),
            sex=sex,
            smoker=smoker,
            bmi_kg_m2=round(bmi, 1),
            sleep_hours=round(
                float(rng.uniform(5.5, 9.0)) + (smoker_rule.sleep_shift_h if smoker else 0.0), 1
            ),
            systolic_mmhg=round(systolic),
            diastolic_mmhg=round(systolic - float(rng.uniform(30.0, 45.0))),
            resting_hr_bpm=round(hr + float(rng.normal(0.0, 1.5))),
            family_history=bool(rng.random() < 0.25),
            height_cm=round(height, 1),
            weight_kg=round(weight, 1),
        )
        # Rounding weight can push the implied BMI past the tolerance check.
        implied = metadata.weight_kg / (metadata.height_cm / 100.0) ** 2
        metadata.bmi_kg_m2 = round(implied, 1)
        subjects.append(CohortSubject(config, recording, annotation, metadata))
    return Cohort(subjects=subjects)


def write_cohort(cohort: Cohort, out_dir: Path | str) -> Path:
    """Persist a cohort in the ingest formats plus per-subject annotations.

    Returns the manifest path.  Output bytes are a pure function of the
    cohort, so equal seeds give identical trees on disk.
    """
    from .delineate import write_fiducials_csv  # shared fiducial CSV format

    out = Path(out_dir)
    (out / "recordings").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in cohort.subjects:
        rel = f"recordings/{s.metadata.subject_id}.csv"
        ingest.write_recording(s.recording, out / rel)
        write_fiducials_csv(
            _annotation_as_fiducials(s.annotation),
            out / "annotations" / f"{s.metadata.subject_id}.csv",
        )
        entries.append(ingest.ManifestEntry(recording=rel, subject_id=s.metadata.subject_id))
    ingest.write_metadata(cohort.metadata, out / "metadata.json")
    manifest = ingest.DatasetManifest(
        dataset_name=cohort.dataset_name,
        version=cohort.version,
        metadata_path="metadata.json",
        entries=entries,
        root=out,
    )
    path = out / "manifest.json"
    ingest.write_manifest(manifest, path)
    return path


def _annotation_as_fiducials(annotation: SynthAnnotation):
    from .delineate import FiducialSet

    out = []
    for c in annotation.cycles:
        out.append(
            FiducialSet(
                r_peak=c.r_peak,
                p_onset=c.p_onset,
                p_peak=c.p_peak,
                p_offset=c.p_offset,
                qrs_onset=c.qrs_onset,
                qrs_offset=c.qrs_offset,
                t_onset=c.t_onset,
                t_peak=c.t_peak,
                t_offset=c.t_offset,
            )
        )
    return out
