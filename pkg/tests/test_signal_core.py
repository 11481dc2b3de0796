import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiderp.errors import (
    BadSamplingRate,
    DeadChannel,
    LengthMismatch,
    MissingFile,
    NoPeaksFound,
    RecordTooShort,
    TooFewPeaks,
)
from spiderp.signal_core import (
    ChannelSet,
    FeatureWindow,
    ManifestEntry,
    RawRecord,
    attach_labels,
    decompose_gsr,
    detect_r_peaks,
    downsample,
    featurize,
    hr_from_peaks,
    load_record,
    normalize_subjectwise,
    read_manifest,
    window_statistics,
    write_manifest,
    write_signal_csv,
)
from spiderp.synth_data import SynthConfig, gen_ecg, scr_shape


def loop_statistics(x, g):
    """Straight-loop version of the four window statistics."""
    n = 20 * g
    rows = []
    for s in range(len(x) // g - 20 + 1):
        w = [float(v) for v in x[s * g: s * g + n]]
        mean = sum(w) / n
        var = sum((v - mean) ** 2 for v in w) / n
        d1 = sum(abs(w[i + 1] - w[i]) for i in range(n - 1)) / n
        d2 = sum(abs(w[i + 2] - w[i]) for i in range(n - 2)) / n
        rows.append((mean, var, d1, d2))
    return np.array(rows)


def make_entry(tmp_path, ecg, gsr, fs, ann=None):
    write_signal_csv(str(tmp_path / "e.csv"), ecg, fs)
    write_signal_csv(str(tmp_path / "g.csv"), gsr, fs)
    return ManifestEntry("s1", "target", 0, fs, str(tmp_path / "e.csv"), str(tmp_path / "g.csv"))


# -- load_record -------------------------------------------------------------

def test_load_record_length(tmp_path):
    fs = 256
    x = np.sin(np.arange(60 * fs) / 10)
    rec = load_record(make_entry(tmp_path, x, x + 5, fs))
    assert rec.ecg.size == rec.gsr.size == 15360
    assert rec.duration_s == pytest.approx(60.0)


def test_load_record_length_mismatch(tmp_path):
    fs = 256
    x = np.zeros(60 * fs)
    with pytest.raises(LengthMismatch):
        load_record(make_entry(tmp_path, x, x[:-1], fs))


def test_load_record_bad_fs(tmp_path):
    entry = ManifestEntry("s", "target", 0, 0.0, "a.csv", "b.csv")
    with pytest.raises(BadSamplingRate):
        load_record(entry)


def test_load_record_fs_inconsistent_with_time_column(tmp_path):
    x = np.zeros(60 * 128)
    entry = make_entry(tmp_path, x, x, 128)
    entry = ManifestEntry("s", "target", 0, 256.0, entry.ecg_path, entry.gsr_path)
    with pytest.raises(BadSamplingRate):
        load_record(entry)


def test_load_record_missing_file(tmp_path):
    entry = ManifestEntry("s", "target", 0, 128.0, str(tmp_path / "x.csv"), str(tmp_path / "y.csv"))
    with pytest.raises(MissingFile):
        load_record(entry)


def test_manifest_round_trip(tmp_path):
    rows = [
        {"id": "a", "role": "source", "sex": 0, "pclm": None, "fs": "128",
         "ecg_path": "a_e.csv", "gsr_path": "a_g.csv", "annotation_path": "a.csv"},
        {"id": "b", "role": "target", "sex": 1, "pclm": 40, "fs": "128",
         "ecg_path": "b_e.csv", "gsr_path": "b_g.csv", "annotation_path": None},
    ]
    path = str(tmp_path / "manifest.csv")
    write_manifest(path, rows)
    a, b = read_manifest(path)
    assert a.pclm is None and a.annotation_path == os.path.join(str(tmp_path), "a.csv")
    assert b.pclm == 40 and b.sex == 1 and b.annotation_path is None


def test_raw_record_rejects_short():
    with pytest.raises(RecordTooShort):
        RawRecord("s", 100.0, np.zeros(1999), np.zeros(1999))


# -- R peaks -----------------------------------------------------------------

def gaussian_ecg(peaks, fs, duration, width=0.01):
    t = np.arange(int(duration * fs)) / fs
    x = np.zeros_like(t)
    for p in peaks:
        x += np.exp(-0.5 * ((t - p) / width) ** 2)
    return x


def match_error(detected, planted):
    j = np.clip(np.searchsorted(detected, planted), 1, len(detected) - 1)
    return np.minimum(np.abs(detected[j] - planted), np.abs(detected[j - 1] - planted))


def test_r_peaks_regular():
    fs = 256
    planted = np.arange(60) + 0.5
    det = detect_r_peaks(gaussian_ecg(planted, fs, 60.5), fs)
    assert det.size == 60
    assert np.max(np.abs(det - planted)) < 0.010


def test_r_peaks_alternating_rr():
    fs = 256
    rr = np.tile([0.8, 1.0], 40)
    planted = 0.5 + np.concatenate([[0], np.cumsum(rr)])
    planted = planted[planted < 70]
    det = detect_r_peaks(gaussian_ecg(planted, fs, 71), fs)
    assert det.size == planted.size
    assert np.max(np.abs(np.diff(det) - np.diff(planted))) < 0.010


def test_r_peaks_flat_signal():
    with pytest.raises(NoPeaksFound):
        detect_r_peaks(np.zeros(256 * 10), 256)


def test_r_peaks_refractory_and_monotone():
    cfg = SynthConfig()
    rng = np.random.default_rng(3)
    ecg, _ = gen_ecg(np.ones(120), cfg, rng)
    det = detect_r_peaks(ecg, cfg.fs)
    assert np.all(np.diff(det) >= 0.24)


# -- heart rate --------------------------------------------------------------

def test_hr_constant():
    hr = hr_from_peaks(np.arange(60.0), 4.0, 60.0)
    assert hr.size == 240
    np.testing.assert_allclose(hr, 60.0)


def test_hr_two_peaks():
    hr = hr_from_peaks([1.0, 1.5], 4.0, 3.0)
    np.testing.assert_allclose(hr, 120.0)


def test_hr_too_few_peaks():
    with pytest.raises(TooFewPeaks):
        hr_from_peaks([1.0], 4.0, 10.0)


def test_hr_length_is_ceiling():
    assert hr_from_peaks([0, 1, 2], 4.0, 10.1).size == math.ceil(10.1 * 4)


# -- GSR decomposition -------------------------------------------------------

def test_gsr_constant():
    phasic, tonic = decompose_gsr(np.full(128 * 30, 3.7), 128, 4)
    np.testing.assert_allclose(tonic, 3.7, atol=1e-9)
    np.testing.assert_allclose(phasic, 0.0, atol=1e-9)


def test_gsr_ramp_plus_pulse():
    fs = 128
    t = np.arange(60 * fs) / fs
    ramp = 2.0 + 0.01 * t
    pulse = 0.5 * scr_shape(t - 30.3, SynthConfig())
    phasic, tonic = decompose_gsr(ramp + pulse, fs, 4)
    p_ref = downsample(pulse, fs, 4)
    r_ref = downsample(ramp, fs, 4)
    assert np.linalg.norm(phasic - p_ref) / np.linalg.norm(p_ref) < 0.2
    assert np.linalg.norm(tonic - r_ref) / np.linalg.norm(r_ref) < 0.2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e4))
def test_gsr_reconstruction_bitwise(seed, scale):
    x = scale * np.random.default_rng(seed).normal(size=128 * 12)
    phasic, tonic = decompose_gsr(x, 128, 4)
    assert np.array_equal(tonic + phasic, downsample(x, 128, 4))


# -- normalization -----------------------------------------------------------

def channel_set(a, b=None, c=None):
    a = np.asarray(a, dtype=float)
    return ChannelSet(a, a if b is None else b, a if c is None else c, 4.0, "s")


def test_normalize_three_values():
    out = normalize_subjectwise(channel_set([1, 2, 3]))
    expected = np.array([-1, 0, 1]) / math.sqrt(2 / 3)
    np.testing.assert_allclose(out.hr, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.hr, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_normalize_dead_channel():
    with pytest.raises(DeadChannel):
        normalize_subjectwise(channel_set([1, 2, 3], np.ones(3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalize_moments_and_idempotence(seed):
    rng = np.random.default_rng(seed)
    cs = channel_set(rng.normal(5, 3, 200), rng.exponential(size=200), rng.uniform(size=200))
    once = normalize_subjectwise(cs)
    twice = normalize_subjectwise(once)
    for name in ("hr", "gsr_phasic", "gsr_tonic"):
        x = getattr(once, name)
        assert abs(x.mean()) < 1e-9 and abs(x.std() - 1) < 1e-9
        np.testing.assert_allclose(getattr(twice, name), x, atol=1e-9)


# -- featurize ---------------------------------------------------------------

def test_featurize_constant_window():
    stats = window_statistics(np.full(80, 2.5), 4)
    np.testing.assert_allclose(stats, [[2.5, 0, 0, 0]], atol=1e-15)


def test_featurize_alternating_matches_loop():
    x = np.tile([1.0, -1.0], 40)
    np.testing.assert_allclose(window_statistics(x, 4), loop_statistics(x, 4), rtol=0, atol=1e-12)
    # |diff1| is 2 on each of 79 steps over a divisor of 80
    assert window_statistics(x, 4)[0, 2] == pytest.approx(2 * 79 / 80, abs=1e-12)


def test_featurize_window_count_30s():
    wins = featurize(channel_set(np.arange(120.0), np.sin(np.arange(120.0)), np.cos(np.arange(120.0))))
    assert len(wins) == 11
    assert [w.start_s for w in wins] == list(range(11))
    assert all(w.features.shape == (12,) for w in wins)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(80, 400))
def test_featurize_matches_loop_oracle(seed, n):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, n))
    wins = featurize(channel_set(a, b, c))
    assert len(wins) == n // 4 - 20 + 1
    got = np.vstack([w.features for w in wins])
    expected = np.hstack([loop_statistics(v, 4) for v in (a, b, c)])
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_featurize_translation_covariant():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 400))
    k = 7
    shifted = np.concatenate([rng.normal(size=(3, 4 * k)), x], axis=1)
    base = featurize(channel_set(*x))
    moved = featurize(channel_set(*shifted))
    for i, w in enumerate(base):
        np.testing.assert_allclose(moved[i + k].features, w.features, rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
def test_features_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 200))
    ref = featurize(normalize_subjectwise(channel_set(*x)))
    out = featurize(normalize_subjectwise(channel_set(*(a * x + b))))
    np.testing.assert_allclose(np.vstack([w.features for w in out]),
                               np.vstack([w.features for w in ref]), rtol=0, atol=1e-9)


def test_featurize_too_short():
    with pytest.raises(RecordTooShort):
        featurize(channel_set(np.arange(79.0)))


# -- labels ------------------------------------------------------------------

def windows(starts):
    return [FeatureWindow("s", s, np.zeros(12)) for s in starts]


def test_label_contained():
    (w,) = attach_labels(windows([5]), [(0, 100, 1)])
    assert w.fr_label == 1


def test_label_straddle_dropped():
    out = attach_labels(windows([5, 15, 40]), [(0, 30, 0), (30, 100, 1)])
    assert [(w.start_s, w.fr_label) for w in out] == [(5, 0), (40, 1)]


def test_label_absent_annotations():
    out = attach_labels(windows([0, 1, 2]), None)
    assert len(out) == 3 and all(w.fr_label is None for w in out)
