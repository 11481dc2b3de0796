"""Physiological signal ingestion, channel derivation and window featurization.

Raw ECG and GSR recordings become three uniformly sampled channels (heart
rate, phasic GSR, tonic GSR). Each channel is z-scored over the whole record
and cut into 20 s windows at a 1 s stride, with four statistics per channel.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import median_filter, uniform_filter1d
from scipy.signal import butter, find_peaks, resample_poly, sosfiltfilt

from .errors import (
    BadSamplingRate,
    DeadChannel,
    InvalidAnnotation,
    LengthMismatch,
    ManifestError,
    MissingFile,
    NoPeaksFound,
    RecordTooShort,
    TooFewPeaks,
)

WINDOW_S = 20
STRIDE_S = 1
DEFAULT_GRID_HZ = 4.0
REFRACTORY_S = 0.24
TIME_TOLERANCE_S = 1e-6

CHANNELS = ("hr", "gsr_phasic", "gsr_tonic")
STATISTICS = ("nmean", "nstd", "ndiff1", "ndiff2")
FEATURE_NAMES = tuple(f"{c}_{s}" for c in CHANNELS for s in STATISTICS)

MANIFEST_FIELDS = (
    "id", "role", "sex", "pclm", "fs", "ecg_path", "gsr_path", "annotation_path",
)

Annotation = Tuple[float, float, int]


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    role: str
    sex: int
    fs: float
    ecg_path: str
    gsr_path: str
    pclm: Optional[int] = None
    annotation_path: Optional[str] = None


@dataclass
class RawRecord:
    subject_id: str
    fs: float
    ecg: np.ndarray
    gsr: np.ndarray
    annotations: Optional[List[Annotation]] = None

    def __post_init__(self):
        if not self.fs > 0:
            raise BadSamplingRate(f"{self.subject_id}: fs must be positive, got {self.fs}")
        self.ecg = np.asarray(self.ecg, dtype=float)
        self.gsr = np.asarray(self.gsr, dtype=float)
        if self.ecg.shape != self.gsr.shape:
            raise LengthMismatch(
                f"{self.subject_id}: ecg has {self.ecg.size} samples, gsr has {self.gsr.size}"
            )
        if self.ecg.size < WINDOW_S * self.fs:
            raise RecordTooShort(f"{self.subject_id}: record shorter than {WINDOW_S} s")
        if self.annotations is not None:
            self.annotations = validate_annotations(self.annotations, self.duration_s)

    @property
    def duration_s(self) -> float:
        return self.ecg.size / self.fs


@dataclass
class ChannelSet:
    hr: np.ndarray
    gsr_phasic: np.ndarray
    gsr_tonic: np.ndarray
    grid_hz: float = DEFAULT_GRID_HZ
    subject_id: str = ""

    def __post_init__(self):
        n = {len(self.hr), len(self.gsr_phasic), len(self.gsr_tonic)}
        if len(n) != 1:
            raise LengthMismatch(f"{self.subject_id}: channels differ in length {sorted(n)}")

    def as_matrix(self) -> np.ndarray:
        """Channels stacked as rows, in ``CHANNELS`` order."""
        return np.vstack([self.hr, self.gsr_phasic, self.gsr_tonic])

    @property
    def duration_s(self) -> float:
        return len(self.hr) / self.grid_hz


@dataclass
class FeatureWindow:
    subject_id: str
    start_s: int
    features: np.ndarray
    fr_label: Optional[int] = field(default=None)


# --------------------------------------------------------------------------
# ingestion

def validate_annotations(annotations, duration_s: float) -> List[Annotation]:
    out = sorted((float(a), float(b), int(lab)) for a, b, lab in annotations)
    prev_end = 0.0
    for start, end, label in out:
        if label not in (0, 1):
            raise InvalidAnnotation(f"label must be 0 or 1, got {label}")
        if not 0 <= start < end <= duration_s + TIME_TOLERANCE_S:
            raise InvalidAnnotation(f"interval ({start}, {end}) outside [0, {duration_s}]")
        if start < prev_end - TIME_TOLERANCE_S:
            raise InvalidAnnotation(f"interval ({start}, {end}) overlaps its predecessor")
        prev_end = end
    return out


def read_manifest(path: str) -> List[ManifestEntry]:
    """Parse a cohort manifest CSV. Relative paths resolve against its directory."""
    if not os.path.exists(path):
        raise MissingFile(path)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                pclm = int(row["pclm"]) if row["pclm"].strip() else None
                sex = int(row["sex"])
                fs = float(row["fs"])
            except ValueError as exc:
                raise ManifestError(f"{path}: bad row for {row['id']!r}: {exc}") from None
            if row["role"] not in ("source", "target"):
                raise ManifestError(f"{row['id']}: role must be source or target")
            if sex not in (0, 1):
                raise ManifestError(f"{row['id']}: sex must be 0 or 1")
            if pclm is not None and not 17 <= pclm <= 85:
                raise ManifestError(f"{row['id']}: pclm {pclm} outside 17..85")
            ann = row["annotation_path"].strip()
            entries.append(ManifestEntry(
                subject_id=row["id"],
                role=row["role"],
                sex=sex,
                fs=fs,
                ecg_path=os.path.join(base, row["ecg_path"]),
                gsr_path=os.path.join(base, row["gsr_path"]),
                pclm=pclm,
                annotation_path=os.path.join(base, ann) if ann else None,
            ))
    return entries


def write_manifest(path: str, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in MANIFEST_FIELDS})


def _read_signal_csv(path: str, fs: float) -> Tuple[float, np.ndarray]:
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path) as fh:
        header = fh.readline().strip()
    if header != "t,value":
        raise ManifestError(f"{path}: expected header 't,value', got {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise RecordTooShort(f"{path}: no samples")
    t, values = data[:, 0], data[:, 1]
    expected = t[0] + np.arange(t.size) / fs
    if np.max(np.abs(t - expected)) > TIME_TOLERANCE_S:
        raise BadSamplingRate(f"{path}: time column inconsistent with fs={fs}")
    return float(t[0]), values


def read_annotations(path: str) -> List[Annotation]:
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ("start_s", "end_s", "fr_label"):
            raise InvalidAnnotation(f"{path}: expected header start_s,end_s,fr_label")
        return [(float(r["start_s"]), float(r["end_s"]), int(r["fr_label"])) for r in reader]


def write_signal_csv(path: str, values: np.ndarray, fs: float) -> None:
    t = np.arange(len(values)) / fs
    body = "\n".join(map("{:.6f},{:.6f}".format, t.tolist(), np.asarray(values, float).tolist()))
    with open(path, "w") as fh:
        fh.write("t,value\n" + body + "\n")


def write_annotations(path: str, annotations: Sequence[Annotation]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("start_s,end_s,fr_label\n")
        for start, end, label in annotations:
            fh.write(f"{start:g},{end:g},{int(label)}\n")


def load_record(entry: ManifestEntry) -> RawRecord:
    """Read and validate the signal files referenced by one manifest entry."""
    if not entry.fs > 0:
        raise BadSamplingRate(f"{entry.subject_id}: fs must be positive, got {entry.fs}")
    t0_ecg, ecg = _read_signal_csv(entry.ecg_path, entry.fs)
    t0_gsr, gsr = _read_signal_csv(entry.gsr_path, entry.fs)
    if abs(t0_ecg - t0_gsr) > TIME_TOLERANCE_S:
        raise LengthMismatch(f"{entry.subject_id}: ecg and gsr start at different times")
    annotations = read_annotations(entry.annotation_path) if entry.annotation_path else None
    return RawRecord(entry.subject_id, entry.fs, ecg, gsr, annotations)


# --------------------------------------------------------------------------
# channel derivation

def detect_r_peaks(ecg, fs: float) -> np.ndarray:
    """Locate R peaks with a Pan-Tompkins style detector.

    Band-pass (5-15 Hz, zero phase), derivative, squaring and a 150 ms
    moving-window integration produce an energy envelope. Envelope maxima are
    accepted against running signal/noise levels with a 240 ms refractory
    period and a half-threshold search-back over long gaps. Each accepted QRS
    is then refined to the band-passed R maximum with parabolic interpolation.

    Parameters
    ----------
    ecg : array
        Raw ECG samples.
    fs : float
        Sampling rate (Hz).

    Returns
    -------
    peaks : array
        Strictly increasing peak times in seconds.
    """
    if not fs > 0:
        raise BadSamplingRate(f"fs must be positive, got {fs}")
    ecg = np.asarray(ecg, dtype=float)
    if ecg.size < 2 * fs:
        raise RecordTooShort("ECG shorter than 2 s")
    if not np.all(np.isfinite(ecg)) or np.ptp(ecg) == 0:
        raise NoPeaksFound("flat or non-finite ECG")

    nyq = fs / 2.0
    high = min(15.0, 0.9 * nyq)
    sos = butter(2, [5.0 / nyq, high / nyq], btype="bandpass", output="sos")
    filtered = sosfiltfilt(sos, ecg)
    energy = np.gradient(filtered) ** 2
    integrated = uniform_filter1d(energy, max(1, int(round(0.150 * fs))), mode="nearest")

    refractory = int(math.ceil(REFRACTORY_S * fs))
    candidates, _ = find_peaks(integrated, distance=refractory)
    if candidates.size == 0 or integrated.max() <= 0:
        raise NoPeaksFound("no QRS energy")

    head = integrated[: int(2 * fs)]
    spk = 0.25 * head.max()
    npk = 0.5 * head.mean()
    qrs: List[int] = []
    rejected: List[int] = []
    for idx in candidates:
        value = integrated[idx]
        threshold = npk + 0.25 * (spk - npk)
        if value > threshold and (not qrs or idx - qrs[-1] >= refractory):
            if len(qrs) >= 2:
                rr_mean = np.mean(np.diff(qrs[-9:]))
                if idx - qrs[-1] > 1.66 * rr_mean:
                    missed = [c for c in rejected
                              if c - qrs[-1] >= refractory and idx - c >= refractory
                              and integrated[c] > 0.5 * threshold]
                    if missed:
                        best = max(missed, key=lambda c: integrated[c])
                        qrs.append(best)
                        spk = 0.25 * integrated[best] + 0.75 * spk
            qrs.append(idx)
            spk = 0.125 * value + 0.875 * spk
            rejected = []
        else:
            npk = 0.125 * value + 0.875 * npk
            rejected.append(idx)
    if not qrs:
        raise NoPeaksFound("no candidate crossed the adaptive threshold")

    half = int(math.ceil(0.075 * fs))
    times = []
    for idx in qrs:
        lo, hi = max(0, idx - half), min(filtered.size, idx + half + 1)
        k = lo + int(np.argmax(filtered[lo:hi]))
        offset = 0.0
        if 0 < k < filtered.size - 1:
            a, b, c = filtered[k - 1], filtered[k], filtered[k + 1]
            denom = a - 2 * b + c
            if denom < 0:
                offset = 0.5 * (a - c) / denom
        times.append((k + offset) / fs)

    peaks: List[float] = []
    for t in sorted(times):
        if peaks and t - peaks[-1] < REFRACTORY_S:
            continue
        peaks.append(t)
    return np.asarray(peaks)


def hr_from_peaks(peaks, grid_hz: float, duration_s: float) -> np.ndarray:
    """Instantaneous heart rate (BPM) on a uniform grid starting at t=0.

    ``60/RR`` is placed at each interval midpoint and linearly interpolated,
    holding the end values constant beyond the first and last midpoint.
    Intervals longer than 3 s are treated as detection gaps and skipped.
    """
    peaks = np.asarray(peaks, dtype=float)
    if peaks.size < 2:
        raise TooFewPeaks(f"need at least 2 peaks, got {peaks.size}")
    rr = np.diff(peaks)
    mid = peaks[:-1] + rr / 2
    keep = (rr > 0) & (rr <= 3.0)
    if not keep.any():
        raise TooFewPeaks("no plausible RR interval")
    n = int(math.ceil(round(duration_s * grid_hz, 9)))
    grid = np.arange(n) / grid_hz
    return np.interp(grid, mid[keep], 60.0 / rr[keep])


def downsample(signal, fs: float, grid_hz: float) -> np.ndarray:
    """Anti-aliased resampling onto the ``grid_hz`` grid.

    Output values are snapped to a power-of-two quantum so that differences
    of two outputs are exact in floating point.
    """
    ratio = Fraction(grid_hz / fs).limit_denominator(10000)
    x = np.asarray(signal, dtype=float)
    if ratio == 1:
        y = x.copy()
    else:
        y = resample_poly(x, ratio.numerator, ratio.denominator, padtype="line")
    scale = np.max(np.abs(y))
    if scale > 0:
        quantum = 2.0 ** (math.ceil(math.log2(scale)) - 50)
        y = np.round(y / quantum) * quantum
    return y


def decompose_gsr(gsr, fs: float, grid_hz: float = DEFAULT_GRID_HZ) -> Tuple[np.ndarray, np.ndarray]:
    """Split skin conductance into phasic and tonic parts on the ``grid_hz`` grid.

    Tonic is a centered 4 s running median of the downsampled signal; phasic is
    the residual, so ``phasic + tonic`` reproduces ``downsample(gsr)`` exactly.

    Returns
    -------
    phasic, tonic : array
    """
    gsr = np.asarray(gsr, dtype=float)
    if gsr.size < 10 * fs:
        raise RecordTooShort("GSR shorter than 10 s")
    down = downsample(gsr, fs, grid_hz)
    size = int(round(4.0 * grid_hz)) | 1
    tonic = median_filter(down, size=size, mode="nearest")
    phasic = down - tonic
    return phasic, tonic


def derive_channels(record: RawRecord, grid_hz: float = DEFAULT_GRID_HZ) -> ChannelSet:
    peaks = detect_r_peaks(record.ecg, record.fs)
    hr = hr_from_peaks(peaks, grid_hz, record.duration_s)
    phasic, tonic = decompose_gsr(record.gsr, record.fs, grid_hz)
    n = min(hr.size, phasic.size)
    return ChannelSet(hr[:n], phasic[:n], tonic[:n], grid_hz, record.subject_id)


def normalize_subjectwise(channels: ChannelSet) -> ChannelSet:
    """Z-score every channel with its own whole-record mean and population std."""
    out = {}
    for name in CHANNELS:
        x = np.asarray(getattr(channels, name), dtype=float)
        std = x.std()
        if not std > 0 or not np.isfinite(std):
            raise DeadChannel(f"{channels.subject_id}: channel {name} has zero variance")
        out[name] = (x - x.mean()) / std
    return replace(channels, **out)


# --------------------------------------------------------------------------
# windows

def _samples_per_second(grid_hz: float) -> int:
    g = int(round(grid_hz))
    if g <= 0 or abs(g - grid_hz) > 1e-9:
        raise ValueError(f"grid_hz must be a positive integer, got {grid_hz}")
    return g


def window_statistics(x: np.ndarray, grid_hz: float) -> np.ndarray:
    """Four window statistics for every 1 s-strided 20 s window of one channel.

    Returns an ``(n_windows, 4)`` array of (Nmean, Nstd, Ndiff1, Ndiff2). All
    four share the divisor ``20 * grid_hz``; Nstd is the mean squared
    deviation, without a square root.
    """
    g = _samples_per_second(grid_hz)
    n = WINDOW_S * g
    if x.size < n:
        raise RecordTooShort(f"need {WINDOW_S} s of samples, got {x.size / g:.2f} s")
    n_windows = x.size // g - WINDOW_S + 1
    w = np.lib.stride_tricks.sliding_window_view(x, n)[::g][:n_windows]
    nmean = w.sum(axis=1) / n
    nstd = ((w - nmean[:, None]) ** 2).sum(axis=1) / n
    ndiff1 = np.abs(w[:, 1:] - w[:, :-1]).sum(axis=1) / n
    ndiff2 = np.abs(w[:, 2:] - w[:, :-2]).sum(axis=1) / n
    return np.column_stack([nmean, nstd, ndiff1, ndiff2])


def featurize(channels: ChannelSet, grid_hz: Optional[float] = None) -> List[FeatureWindow]:
    """Cut normalized channels into labelled-later 12-feature windows."""
    grid_hz = channels.grid_hz if grid_hz is None else grid_hz
    blocks = [window_statistics(np.asarray(getattr(channels, c), float), grid_hz)
              for c in CHANNELS]
    feats = np.hstack(blocks)
    return [FeatureWindow(channels.subject_id, i * STRIDE_S, feats[i])
            for i in range(feats.shape[0])]


def attach_labels(windows: Sequence[FeatureWindow], annotations) -> List[FeatureWindow]:
    """Label windows lying wholly inside an annotated interval.

    Windows that straddle an interval boundary, or fall outside every
    interval, are dropped. Without annotations the windows come back
    unlabelled.
    """
    if not annotations:
        return [replace(w, fr_label=None) for w in windows]
    out = []
    for w in windows:
        start, end = w.start_s, w.start_s + WINDOW_S
        for a, b, label in annotations:
            if a <= start and end <= b:
                out.append(replace(w, fr_label=int(label)))
                break
    return out


def feature_matrix(windows: Sequence[FeatureWindow]) -> np.ndarray:
    if not windows:
        return np.empty((0, len(FEATURE_NAMES)))
    return np.vstack([w.features for w in windows])


def process_record(record: RawRecord, grid_hz: float = DEFAULT_GRID_HZ) -> List[FeatureWindow]:
    """Full chain for one record: channels, normalization, windows, labels."""
    channels = normalize_subjectwise(derive_channels(record, grid_hz))
    windows = featurize(channels, grid_hz)
    if record.annotations is not None:
        windows = attach_labels(windows, record.annotations)
    return windows


def write_windows_csv(path: str, windows: Sequence[FeatureWindow]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(("subject_id", "start_s") + FEATURE_NAMES + ("fr_label",)) + "\n")
        for w in windows:
            vals = ",".join(f"{v:.17g}" for v in w.features)
            label = "" if w.fr_label is None else str(w.fr_label)
            fh.write(f"{w.subject_id},{w.start_s},{vals},{label}\n")
