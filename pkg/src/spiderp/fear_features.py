"""Fear-response curves and the static per-subject features derived from them."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .errors import NonBinaryInput, RecordTooShort
from .fear_model import FrEnsemble
from .signal_core import FeatureWindow, feature_matrix

INITIAL_SPAN_S = 30
MIN_CURVE_POINTS = INITIAL_SPAN_S + 1


@dataclass
class FearCurve:
    subject_id: str
    times_s: np.ndarray
    scores: np.ndarray
    duration_s: float


@dataclass(frozen=True)
class StaticFeatures:
    slope: float
    initial_fr: float
    sex: int

    def as_tuple(self):
        return (self.slope, self.initial_fr, self.sex)


def build_curve(ensemble: FrEnsemble, windows: Sequence[FeatureWindow],
                min_points: int = MIN_CURVE_POINTS) -> FearCurve:
    if len(windows) < min_points:
        raise RecordTooShort(f"need {min_points} windows for a fear curve, got {len(windows)}")
    scores = ensemble.score_matrix(feature_matrix(windows))
    times = np.array([w.start_s for w in windows], dtype=float)
    sid = windows[0].subject_id
    return FearCurve(sid, times, scores, float(times[-1]))


def curve_slope(curve: FearCurve) -> float:
    """OLS slope of score against time rescaled so the last window sits at 1."""
    t = np.asarray(curve.times_s, dtype=float)
    a = np.asarray(curve.scores, dtype=float)
    if t.size < 2:
        raise RecordTooShort("slope needs at least two points")
    u = t / t[-1]
    du = u - u.mean()
    return float(np.dot(du, a - a.mean()) / np.dot(du, du))


def initial_response(curve: FearCurve) -> float:
    """Mean score over windows starting in the first 30 s."""
    mask = np.asarray(curve.times_s) < INITIAL_SPAN_S
    if not mask.any():
        raise RecordTooShort("no window starts inside the first 30 s")
    return float(np.mean(np.asarray(curve.scores)[mask]))


def assemble(curve: FearCurve, sex: int) -> StaticFeatures:
    if sex not in (0, 1):
        raise NonBinaryInput(f"sex must be 0 or 1, got {sex}")
    return StaticFeatures(curve_slope(curve), initial_response(curve), int(sex))


def write_curves_csv(path: str, curves: Iterable[FearCurve]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "start_s", "score"])
        for c in curves:
            for t, s in zip(c.times_s, c.scores):
                writer.writerow([c.subject_id, f"{t:g}", f"{s:.17g}"])


def write_static_csv(path: str, rows: Sequence[tuple]) -> None:
    """``rows`` holds ``(subject_id, StaticFeatures, pclm_or_None)`` triples."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "slope", "initial_fr", "sex", "pclm"])
        for sid, feats, pclm in rows:
            writer.writerow([sid, f"{feats.slope:.17g}", f"{feats.initial_fr:.17g}",
                             feats.sex, "" if pclm is None else pclm])


def read_static_csv(path: str) -> List[tuple]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            feats = StaticFeatures(float(r["slope"]), float(r["initial_fr"]), int(r["sex"]))
            out.append((r["subject_id"], feats, int(r["pclm"]) if r["pclm"] else None))
    return out
