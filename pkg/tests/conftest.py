import numpy as np
import pytest

from ecgage import preprocess, synth
from ecgage.delineate import delineate, detect_r_peaks


@pytest.fixture(scope="session")
def oracle_recording():
    """Noiseless 60 bpm, 180 s reference recording with annotations."""
    cfg = synth.SynthConfig(duration_s=180.0, mean_hr_bpm=60.0, seed=7)
    rec, ann = synth.generate(cfg)
    return cfg, rec, ann


@pytest.fixture(scope="session")
def oracle_clean(oracle_recording):
    _, rec, _ = oracle_recording
    return preprocess.preprocess_recording(rec)


@pytest.fixture(scope="session")
def oracle_fiducials(oracle_clean):
    return delineate(oracle_clean)


@pytest.fixture(scope="session")
def oracle_r_peaks(oracle_clean):
    return detect_r_peaks(oracle_clean)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """8 subjects x 60 s written to disk in the ingest formats."""
    root = tmp_path_factory.mktemp("cohort8")
    cohort = synth.make_cohort(8, seed=3, duration_s=60.0)
    synth.write_cohort(cohort, root)
    return root, cohort


def match_peaks(detected, truth, tol_samples=5):
    """Greedy 1:1 matching of detected to true peaks within a tolerance."""
    truth = np.asarray(truth)
    used = set()
    pairs = []
    for d in np.asarray(detected):
        j = int(np.argmin(np.abs(truth - d)))
        if abs(int(truth[j]) - int(d)) <= tol_samples and j not in used:
            used.add(j)
            pairs.append((int(d), int(truth[j])))
    return pairs
