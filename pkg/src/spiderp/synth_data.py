"""Synthetic source (phobia-like) and target (PTSD-like) cohorts with known ground truth.

Each subject carries a latent fear state in [0, 1], sampled once per second.
Heart rate rises linearly with it and skin-conductance responses arrive more
often. Source subjects alternate annotated rest/fear segments. Target
subjects follow a monotone trend whose starting level and slope set their
planted PCL-M through a fixed monotone link.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple

import numpy as np

from .signal_core import write_annotations, write_manifest, write_signal_csv

PURPOSE_SUBJECT, PURPOSE_ECG, PURPOSE_GSR = 0, 1, 2


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_source_subjects: int = 30
    n_target_subjects: int = 24
    record_duration_s: int = 600
    fs: float = 128.0
    # heart
    baseline_hr: float = 65.0
    baseline_hr_spread: float = 5.0
    hr_elevation: float = 30.0
    rr_jitter_s: float = 0.01
    r_width_s: float = 0.01
    ecg_noise: float = 0.02
    # skin conductance
    tonic_level: float = 5.0
    tonic_drift: float = 0.3
    tonic_fear_gain: float = 0.5
    scr_base_rate: float = 0.5
    scr_fear_rate: float = 4.0
    scr_amplitude: float = 0.3
    scr_rise_s: float = 0.1
    scr_decay_s: float = 0.5
    scr_recovery_s: float = 4.0
    gsr_noise: float = 0.005
    # source protocol
    segment_s: int = 60
    # target trajectories and severity link
    ptsd_fraction: float = 0.5
    female_fraction: float = 0.25
    knot_noise: float = 0.03
    ptsd_initial: Tuple[float, float] = (0.05, 0.3)
    ptsd_trend: Tuple[float, float] = (0.4, 0.8)
    control_initial: Tuple[float, float] = (0.6, 0.9)
    control_trend: Tuple[float, float] = (-0.6, -0.2)
    link_intercept: float = 42.0
    link_trend: float = 25.0
    link_initial: float = -15.0

    def __post_init__(self):
        if self.record_duration_s < 60:
            raise ValueError("record_duration_s must be at least 60")
        if not self.fs > 0:
            raise ValueError("fs must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "SynthConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PlantedSubject:
    subject_id: str
    role: str
    sex: int
    fear_state: np.ndarray
    ptsd_group: Optional[bool] = None
    initial: Optional[float] = None
    trend: Optional[float] = None
    pclm: Optional[int] = None
    annotations: Optional[List[Tuple[float, float, int]]] = None
    physiology: dict = field(default_factory=dict)


def subject_rng(seed: int, index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, purpose]))


def planted_pclm(initial: float, trend: float, config: SynthConfig) -> int:
    """Monotone severity link: rising fear and a low start mean higher PCL-M."""
    raw = config.link_intercept + config.link_trend * trend + config.link_initial * initial
    return int(np.clip(np.round(raw), 17, 85))


def fear_trajectory(initial: float, trend: float, duration_s: int, rng, knot_noise: float) -> np.ndarray:
    """Per-second fear state, piecewise linear between one-minute knots."""
    knots_t = np.arange(0, duration_s + 60, 60, dtype=float)
    knots_t[-1] = min(knots_t[-1], duration_s)
    base = initial + trend * knots_t / duration_s
    knots = base + rng.normal(0.0, knot_noise, size=knots_t.size)
    t = np.arange(duration_s, dtype=float)
    return np.clip(np.interp(t, knots_t, knots), 0.0, 1.0)


def _per_sample(fear_state: np.ndarray, n: int, fs: float) -> np.ndarray:
    t = np.arange(n) / fs
    return np.interp(t, np.arange(fear_state.size) + 0.5, fear_state)


def gen_ecg(fear_state, config: SynthConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian R-waves at RR = 60 / (baseline + elevation * fear), plus jitter.

    Returns
    -------
    ecg : array
        ``len(fear_state) * fs`` samples.
    peaks : array
        Planted R-peak times in seconds.
    """
    fear_state = np.asarray(fear_state, dtype=float)
    duration = fear_state.size
    n = int(round(duration * config.fs))
    peaks = []
    t = rng.uniform(0.2, 0.6)
    while t < duration - 0.1:
        peaks.append(t)
        hr = config.baseline_hr + config.hr_elevation * fear_state[min(int(t), duration - 1)]
        t += 60.0 / hr + rng.normal(0.0, config.rr_jitter_s)
    peaks = np.asarray(peaks)

    ecg = rng.normal(0.0, config.ecg_noise, size=n)
    ts = np.arange(n) / config.fs
    ecg += 0.1 * np.sin(2 * np.pi * 0.2 * ts + rng.uniform(0, 2 * np.pi))
    half = int(np.ceil(6 * max(config.r_width_s, 0.04) * config.fs))
    for p in peaks:
        c = int(round(p * config.fs))
        lo, hi = max(0, c - half), min(n, c + half + int(0.3 * config.fs))
        seg = ts[lo:hi] - p
        ecg[lo:hi] += np.exp(-0.5 * (seg / config.r_width_s) ** 2)
        ecg[lo:hi] += 0.2 * np.exp(-0.5 * ((seg - 0.25) / 0.04) ** 2)
    return ecg, peaks


def scr_shape(tau, config: SynthConfig) -> np.ndarray:
    """Bi-exponential skin-conductance response with unit peak, zero before onset."""
    tau = np.asarray(tau, dtype=float)
    r, d = config.scr_rise_s, config.scr_decay_s
    t_peak = np.log(d / r) * d * r / (d - r)
    peak = np.exp(-t_peak / d) - np.exp(-t_peak / r)
    safe = np.maximum(tau, 0.0)
    out = (np.exp(-safe / d) - np.exp(-safe / r)) / peak
    return np.where(tau > 0, out, 0.0)


def gen_gsr(fear_state, config: SynthConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Slow tonic drift plus SCR pulses arriving at rate base + fear_rate * fear.

    Rates are events per minute; arrivals are drawn per second as Poisson
    counts placed uniformly inside the second.

    Returns
    -------
    gsr : array
        Skin conductance in microsiemens.
    onsets : array
        Planted pulse onset times in seconds.
    """
    fear_state = np.asarray(fear_state, dtype=float)
    duration = fear_state.size
    n = int(round(duration * config.fs))
    ts = np.arange(n) / config.fs

    rate_per_s = (config.scr_base_rate + config.scr_fear_rate * fear_state) / 60.0
    counts = rng.poisson(rate_per_s)
    onsets = np.sort(np.concatenate(
        [sec + rng.uniform(0.0, 1.0, size=k) for sec, k in enumerate(counts) if k]
        or [np.empty(0)]
    ))

    phase = rng.uniform(0, 2 * np.pi)
    gsr = (config.tonic_level
           + config.tonic_drift * np.sin(2 * np.pi * ts / 300.0 + phase)
           + config.tonic_fear_gain * _per_sample(fear_state, n, config.fs))
    span = int(np.ceil(config.scr_recovery_s * config.fs))
    for onset in onsets:
        lo = int(np.floor(onset * config.fs))
        hi = min(n, lo + span)
        amp = config.scr_amplitude * rng.uniform(0.7, 1.3)
        gsr[lo:hi] += amp * scr_shape(ts[lo:hi] - onset, config)
    gsr += rng.normal(0.0, config.gsr_noise, size=n)
    return gsr, onsets


def _physiology(rng, config: SynthConfig) -> dict:
    return {
        "baseline_hr": float(config.baseline_hr + rng.normal(0.0, config.baseline_hr_spread)),
        "tonic_level": float(config.tonic_level * rng.uniform(0.6, 1.4)),
    }


def plant_subjects(config: SynthConfig) -> List[PlantedSubject]:
    """Draw every subject's sex, fear trajectory and (for targets) planted PCL-M."""
    out = []
    d = config.record_duration_s
    for i in range(config.n_source_subjects):
        rng = subject_rng(config.seed, i, PURPOSE_SUBJECT)
        sex = int(rng.random() < config.female_fraction)
        fear_first = bool(rng.integers(2))
        fear = np.zeros(d)
        annotations = []
        for k, start in enumerate(range(0, d, config.segment_s)):
            end = min(d, start + config.segment_s)
            label = int((k % 2 == 0) == fear_first)
            level = rng.uniform(0.75, 1.0) if label else rng.uniform(0.0, 0.1)
            fear[start:end] = level
            annotations.append((float(start), float(end), label))
        out.append(PlantedSubject(f"src{i:03d}", "source", sex, fear, annotations=annotations,
                                  physiology=_physiology(rng, config)))

    n_ptsd = int(round(config.ptsd_fraction * config.n_target_subjects))
    for j in range(config.n_target_subjects):
        index = config.n_source_subjects + j
        rng = subject_rng(config.seed, index, PURPOSE_SUBJECT)
        sex = int(rng.random() < config.female_fraction)
        ptsd = j < n_ptsd
        initial = rng.uniform(*(config.ptsd_initial if ptsd else config.control_initial))
        trend = rng.uniform(*(config.ptsd_trend if ptsd else config.control_trend))
        fear = fear_trajectory(initial, trend, d, rng, config.knot_noise)
        out.append(PlantedSubject(
            f"tgt{j:03d}", "target", sex, fear, ptsd_group=ptsd,
            initial=float(initial), trend=float(trend),
            pclm=planted_pclm(initial, trend, config),
            physiology=_physiology(rng, config),
        ))
    return out


def gen_cohort(config: SynthConfig, out_dir: str) -> str:
    """Write signals, annotations, manifest and planted truth under ``out_dir``.

    Returns the manifest path.
    """
    os.makedirs(os.path.join(out_dir, "signals"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "annotations"), exist_ok=True)
    rows, truth = [], []
    for index, subject in enumerate(plant_subjects(config)):
        subject_cfg = replace(config, **subject.physiology)
        ecg, _ = gen_ecg(subject.fear_state, subject_cfg, subject_rng(config.seed, index, PURPOSE_ECG))
        gsr, _ = gen_gsr(subject.fear_state, subject_cfg, subject_rng(config.seed, index, PURPOSE_GSR))
        ecg_rel = os.path.join("signals", f"{subject.subject_id}_ecg.csv")
        gsr_rel = os.path.join("signals", f"{subject.subject_id}_gsr.csv")
        write_signal_csv(os.path.join(out_dir, ecg_rel), ecg, config.fs)
        write_signal_csv(os.path.join(out_dir, gsr_rel), gsr, config.fs)
        ann_rel = None
        if subject.annotations is not None:
            ann_rel = os.path.join("annotations", f"{subject.subject_id}.csv")
            write_annotations(os.path.join(out_dir, ann_rel), subject.annotations)
        rows.append({
            "id": subject.subject_id, "role": subject.role, "sex": subject.sex,
            "pclm": subject.pclm, "fs": f"{config.fs:g}", "ecg_path": ecg_rel,
            "gsr_path": gsr_rel, "annotation_path": ann_rel,
        })
        if subject.role == "target":
            truth.append((subject.subject_id, int(subject.ptsd_group), subject.initial,
                          subject.trend, subject.pclm))
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, rows)
    with open(os.path.join(out_dir, "planted.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "ptsd_group", "initial", "trend", "pclm"])
        for sid, group, initial, trend, pclm in truth:
            writer.writerow([sid, group, f"{initial:.17g}", f"{trend:.17g}", pclm])
    with open(os.path.join(out_dir, "synth_config.json"), "w") as fh:
        fh.write(config.to_json())
    return manifest
