from dataclasses import replace

import numpy as np
import pytest

from ecgage import preprocess, synth
from ecgage.delineate import (
    FIDUCIAL_NAMES,
    DelineatorConfig,
    FiducialSet,
    delineate,
    delineate_cycles,
    detect_r_peaks,
    dyadic_slope_details,
    read_fiducials_csv,
    write_fiducials_csv,
)
from ecgage.errors import DataError
from conftest import match_peaks

WAVE_NAMES = [n for n in FIDUCIAL_NAMES if n != "r_peak"]


def fiducial_errors(fids, annotation):
    true_by_r = {c.r_peak: c for c in annotation.cycles}
    errors = {n: [] for n in WAVE_NAMES}
    for f in fids:
        t = true_by_r.get(f.r_peak)
        if t is None:
            r = min(true_by_r, key=lambda v: abs(v - f.r_peak))
            t = true_by_r[r]
        for n in WAVE_NAMES:
            dv, tv = getattr(f, n), getattr(t, n)
            if dv is not None and tv is not None:
                errors[n].append(dv - tv)
    return errors


class TestDetectRPeaks:
    def test_noiseless_60bpm_exact(self):
        cfg = synth.SynthConfig(duration_s=60.0, mean_hr_bpm=60.0, seed=1)
        rec, ann = synth.generate(cfg)
        clean = preprocess.preprocess_recording(rec)
        peaks = detect_r_peaks(clean)
        assert abs(len(peaks) - 60) <= 1
        pairs = match_peaks(peaks, ann.r_peaks, tol_samples=1)
        assert len(pairs) == len(ann.r_peaks) == len(peaks)

    def test_zero_signal_rejected(self):
        clean = preprocess.CleanRecording(
            subject_id="flat",
            sampling_rate_hz=100.0,
            samples=np.zeros(3000),
            validity_mask=np.ones(3000, bool),
            raw_samples=np.zeros(3000),
            filter_spec=preprocess.FilterSpec(),
            baseline_spec=preprocess.BaselineSpec(),
            filter_mode="zero_phase",
            norm_mean=0.0,
            norm_std=1.0,
        )
        with pytest.raises(DataError, match="fewer than 2"):
            detect_r_peaks(clean)

    def test_snr20_sensitivity_and_ppv(self):
        hits = total_true = total_det = 0
        for seed in (11, 12, 13):
            cfg = synth.SynthConfig(
                duration_s=60.0, mean_hr_bpm=72.0, hr_variability_ms=25.0,
                seed=seed, noise_snr_db=20.0,
            )
            rec, ann = synth.generate(cfg)
            clean = preprocess.preprocess_recording(rec)
            peaks = detect_r_peaks(clean)
            pairs = match_peaks(peaks, ann.r_peaks)
            hits += len(pairs)
            total_true += len(ann.r_peaks)
            total_det += len(peaks)
        assert hits / total_true >= 0.99
        assert hits / total_det >= 0.99

    def test_refractory_gap_invariant(self, oracle_r_peaks):
        gaps = np.diff(oracle_r_peaks)
        assert gaps.min() >= 25  # 250 ms at 100 Hz


class TestDelineateCycles:
    def test_fiducials_within_tolerance(self, oracle_clean, oracle_fiducials, oracle_recording):
        _, _, ann = oracle_recording
        errors = fiducial_errors(oracle_fiducials, ann)
        for name, errs in errors.items():
            assert errs, f"no {name} detected at all"
            assert max(abs(e) for e in errs) <= 2, name  # 20 ms at 100 Hz

    def test_ordering_invariant(self, oracle_fiducials):
        for f in oracle_fiducials:
            assert f.ordered()

    def test_p_ablation(self):
        waves = synth.normal_waves()
        waves["P"] = replace(waves["P"], amplitude=0.0)
        cfg = synth.SynthConfig(duration_s=60.0, mean_hr_bpm=60.0, seed=3, waves=waves)
        rec, _ = synth.generate(cfg)
        fids = delineate(preprocess.preprocess_recording(rec))
        assert fids
        assert all(f.p_peak is None and f.p_onset is None for f in fids)
        assert all(f.t_peak is not None for f in fids)
        assert all(f.qrs_onset is not None for f in fids)

    def test_amplitude_scale_invariance(self, oracle_clean, oracle_fiducials):
        scaled = preprocess.CleanRecording(**{**oracle_clean.__dict__})
        scaled.samples = oracle_clean.samples * 11.3
        fids = delineate_cycles(scaled, detect_r_peaks(scaled))
        assert len(fids) == len(oracle_fiducials)
        for a, b in zip(fids, oracle_fiducials):
            assert a.present() == b.present()

    def test_shift_equivariance_interior(self, oracle_clean, oracle_fiducials):
        k = 37
        shifted = preprocess.CleanRecording(**{**oracle_clean.__dict__})
        shifted.samples = np.roll(oracle_clean.samples, k)
        fids = delineate_cycles(shifted, detect_r_peaks(shifted))
        by_r = {f.r_peak: f for f in fids}
        n = len(oracle_clean.samples)
        checked = 0
        for f in oracle_fiducials:
            # stay away from the roll seam at both ends
            if not (200 < f.r_peak and f.r_peak + k < n - 200):
                continue
            g = by_r.get(f.r_peak + k)
            assert g is not None, f"cycle at {f.r_peak} lost after shift"
            for name in FIDUCIAL_NAMES:
                a, b = getattr(f, name), getattr(g, name)
                assert (a is None) == (b is None)
                if a is not None:
                    assert b - a == k
            checked += 1
        assert checked > 100

    def test_rr_matches_generator_schedule(self):
        cfg = synth.SynthConfig(
            duration_s=120.0, mean_hr_bpm=66.0, hr_variability_ms=30.0, seed=21
        )
        rec, ann = synth.generate(cfg)
        clean = preprocess.preprocess_recording(rec)
        peaks = detect_r_peaks(clean)
        assert len(peaks) == len(ann.cycles)
        det_rr = np.diff(peaks)
        true_rr = np.diff(ann.r_peaks)
        assert np.abs(det_rr - true_rr).max() <= 1

    def test_needs_two_peaks(self, oracle_clean):
        with pytest.raises(DataError):
            delineate_cycles(oracle_clean, np.array([100]))


class TestSlopeDetails:
    def test_levels_and_shapes(self):
        x = np.random.default_rng(0).normal(size=512)
        details = dyadic_slope_details(x, levels=4)
        assert len(details) == 4
        assert all(d.shape == x.shape for d in details)

    def test_zero_at_extremum_of_smooth_bump(self):
        t = np.arange(400)
        bump = np.exp(-0.5 * ((t - 200) / 12.0) ** 2)
        d = dyadic_slope_details(bump, levels=2)[1]
        assert abs(int(np.argmin(np.abs(d[150:250]))) + 150 - 200) <= 1


class TestFiducialCsv:
    def test_round_trip(self, tmp_path, oracle_fiducials):
        path = tmp_path / "fid.csv"
        write_fiducials_csv(oracle_fiducials, path)
        back = read_fiducials_csv(path)
        assert back == oracle_fiducials

    def test_missing_r_peak_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("cycle_index,fiducial_name,sample_index\n0,p_peak,10\n")
        with pytest.raises(DataError, match="r_peak"):
            read_fiducials_csv(p)

    def test_unknown_fiducial_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("cycle_index,fiducial_name,sample_index\n0,bogus,10\n")
        with pytest.raises(DataError, match="bogus"):
            read_fiducials_csv(p)
