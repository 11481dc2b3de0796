"""Leave-one-subject-out evaluation of the severity model against simple baselines."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import mkde
from .errors import LengthMismatch, TooFewSamples
from .fear_features import StaticFeatures

DEFAULT_KINDS = (mkde.CONTINUOUS, mkde.CONTINUOUS, mkde.BINARY)
BASELINE_MODES = ("mean", "mode")

SubjectRow = Tuple[str, StaticFeatures, int]


def metrics(true_pclm: Sequence[int], pred_pclm: Sequence[int]) -> Tuple[float, float]:
    """Mean absolute error and mean absolute percentage error (in percent)."""
    t = np.asarray(true_pclm, dtype=float)
    p = np.asarray(pred_pclm, dtype=float)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} true values vs {p.size} predictions")
    if t.size == 0:
        raise LengthMismatch("no predictions to score")
    err = np.abs(p - t)
    return float(err.mean()), float(100.0 * np.mean(err / t))


def confusion(true_binary: Sequence[int], pred_binary: Sequence[int]) -> Dict[str, int]:
    t = np.asarray(true_binary, dtype=bool)
    p = np.asarray(pred_binary, dtype=bool)
    return {
        "tp": int(np.sum(t & p)),
        "fp": int(np.sum(~t & p)),
        "fn": int(np.sum(t & ~p)),
        "tn": int(np.sum(~t & ~p)),
    }


def constant_baseline(train_labels: Sequence[int], mode: str = "mean") -> int:
    """Fold-level constant: the mean rounded half-to-even, or the smallest mode."""
    labels = [int(v) for v in train_labels]
    if not labels:
        raise TooFewSamples("baseline needs at least one training label")
    if mode == "mean":
        return round(Fraction(sum(labels), len(labels)))
    if mode == "mode":
        counts = Counter(labels)
        top = max(counts.values())
        return min(v for v, c in counts.items() if c == top)
    raise ValueError(f"baseline mode must be one of {BASELINE_MODES}")


def sex_baseline(train_labels: Sequence[int], train_sex: Sequence[int], query_sex: int,
                 mode: str = "mean") -> int:
    same = [y for y, s in zip(train_labels, train_sex) if s == query_sex]
    return constant_baseline(same if same else train_labels, mode)


@dataclass
class SubjectResult:
    subject_id: str
    true_pclm: int
    pred_pclm: int
    true_binary: int
    pred_binary: int
    sigma: float
    density: mkde.PclmDensity
    constant_pred: int
    sex_pred: int


@dataclass
class MethodScores:
    mae: float
    mape_percent: float
    binary_accuracy: float
    confusion: Dict[str, int]

    @classmethod
    def compute(cls, true_pclm, pred_pclm) -> "MethodScores":
        mae, mape = metrics(true_pclm, pred_pclm)
        tb = [mkde.to_binary(v) for v in true_pclm]
        pb = [mkde.to_binary(v) for v in pred_pclm]
        conf = confusion(tb, pb)
        acc = (conf["tp"] + conf["tn"]) / len(tb)
        return cls(mae, mape, acc, conf)

    def as_dict(self) -> dict:
        return {"mae": self.mae, "mape_percent": self.mape_percent,
                "binary_accuracy": self.binary_accuracy, "confusion": dict(self.confusion)}


@dataclass
class EvalReport:
    subjects: List[SubjectResult]
    spiderp: MethodScores
    baselines: Dict[str, MethodScores]
    baseline_mode: str = "mean"
    n_models: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_subjects": len(self.subjects),
            "n_models": self.n_models,
            "baseline_mode": self.baseline_mode,
            **self.spiderp.as_dict(),
            "baselines": {k: v.as_dict() for k, v in sorted(self.baselines.items())},
            "subjects": [
                {
                    "subject_id": s.subject_id,
                    "true_pclm": s.true_pclm,
                    "pred_pclm": s.pred_pclm,
                    "true_binary": s.true_binary,
                    "pred_binary": s.pred_binary,
                    "sigma": s.sigma,
                    "constant_pred": s.constant_pred,
                    "sex_pred": s.sex_pred,
                    "density": [float(p) for p in s.density.probs],
                }
                for s in self.subjects
            ],
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def loo_evaluate(table: Sequence[SubjectRow], kinds: Sequence[str] = DEFAULT_KINDS,
                 sigma_grid: Optional[np.ndarray] = None, baseline_mode: str = "mean") -> EvalReport:
    """Fit a fresh model (with its own bandwidth search) for every held-out subject."""
    if len(table) < 3:
        raise TooFewSamples(f"leave-one-out needs at least 3 subjects, got {len(table)}")
    ids = [r[0] for r in table]
    X = np.array([r[1].as_tuple() for r in table], dtype=float)
    y = np.array([r[2] for r in table], dtype=int)
    sex = X[:, 2].astype(int) if X.shape[1] > 2 else np.zeros(len(table), dtype=int)

    results = []
    for i, sid in enumerate(ids):
        train = np.arange(len(table)) != i
        model = mkde.fit(X[train], y[train], kinds, sigma_grid)
        density = mkde.predict_density(model, X[i])
        pred = mkde.to_pclm(density)
        results.append(SubjectResult(
            subject_id=sid,
            true_pclm=int(y[i]),
            pred_pclm=pred,
            true_binary=mkde.to_binary(int(y[i])),
            pred_binary=mkde.to_binary(pred),
            sigma=model.sigma,
            density=density,
            constant_pred=constant_baseline(y[train], baseline_mode),
            sex_pred=sex_baseline(y[train], sex[train], sex[i], baseline_mode),
        ))

    truth = [r.true_pclm for r in results]
    return EvalReport(
        subjects=results,
        spiderp=MethodScores.compute(truth, [r.pred_pclm for r in results]),
        baselines={
            "constant": MethodScores.compute(truth, [r.constant_pred for r in results]),
            "sex": MethodScores.compute(truth, [r.sex_pred for r in results]),
        },
        baseline_mode=baseline_mode,
        n_models=len(results),
    )


def write_confusion_csv(path: str, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "tp", "fp", "fn", "tn"])
        rows = [("spiderp", report.spiderp)] + sorted(report.baselines.items())
        for name, scores in rows:
            c = scores.confusion
            writer.writerow([name, c["tp"], c["fp"], c["fn"], c["tn"]])
