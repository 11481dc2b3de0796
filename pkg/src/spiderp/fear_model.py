"""K-fold ensemble of small ReLU MLPs scoring windows for fear response."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import (
    DegenerateLabels,
    ModelFormatError,
    NonFiniteFeature,
    NonFiniteLoss,
    TooFewSubjects,
)
from .signal_core import FEATURE_NAMES, FeatureWindow, feature_matrix

MODEL_FORMAT = "spiderp-fr-ensemble"
MODEL_VERSION = 1
N_FEATURES = len(FEATURE_NAMES)

_P_MIN = np.finfo(float).tiny
_P_MAX = 1.0 - np.finfo(float).epsneg


@dataclass(frozen=True)
class MlpConfig:
    n_units: int = 16
    depth: int = 6
    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.001
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name != "seed" and not getattr(self, f.name) > 0:
                raise ValueError(f"MlpConfig.{f.name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "MlpConfig":
        return cls(**{f.name: data[f.name] for f in fields(cls) if f.name in data})


@dataclass
class Mlp:
    """Dense network; ``weights[i]`` has shape ``(fan_in, fan_out)``."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    loss_history: List[float] = field(default_factory=list, compare=False)

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = np.asarray(X, dtype=float)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.clip(expit(self.logits(X)), _P_MIN, _P_MAX)


def init_mlp(n_in: int, config: MlpConfig, rng: np.random.Generator) -> Mlp:
    """He-uniform weights, zero biases."""
    sizes = [n_in] + [config.n_units] * config.depth + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def loss_and_grad(mlp: Mlp, X: np.ndarray, y: np.ndarray, weight_decay: float
                  ) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Mean binary cross-entropy plus ``weight_decay/2 * sum(W**2)`` and its gradient.

    Biases carry no penalty. The penalty gradient is ``weight_decay * W``,
    the same convention as SGD with a ``weight_decay`` term.
    """
    activations = [np.asarray(X, dtype=float)]
    for W, b in zip(mlp.weights[:-1], mlp.biases[:-1]):
        activations.append(np.maximum(activations[-1] @ W + b, 0.0))
    z = (activations[-1] @ mlp.weights[-1] + mlp.biases[-1])[:, 0]
    n = z.size
    bce = np.mean(np.logaddexp(0.0, z) - y * z)
    penalty = 0.5 * weight_decay * sum(np.sum(W * W) for W in mlp.weights)

    delta = ((expit(z) - y) / n)[:, None]
    grad_w: List[np.ndarray] = [None] * len(mlp.weights)
    grad_b: List[np.ndarray] = [None] * len(mlp.biases)
    for i in range(len(mlp.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta + weight_decay * mlp.weights[i]
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ mlp.weights[i].T) * (activations[i] > 0)
    return float(bce + penalty), grad_w, grad_b


def train_mlp(X: np.ndarray, y: np.ndarray, config: MlpConfig) -> Mlp:
    """SGD with classic momentum for exactly ``config.epochs`` passes.

    Each epoch reshuffles with the seeded generator and keeps the final short
    batch. ``loss_history`` holds the mean batch loss of every epoch.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(y).size < 2:
        raise DegenerateLabels("training set contains a single class")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("training features contain NaN or inf")

    rng = np.random.default_rng(config.seed)
    mlp = init_mlp(X.shape[1], config, rng)
    vel_w = [np.zeros_like(W) for W in mlp.weights]
    vel_b = [np.zeros_like(b) for b in mlp.biases]
    lr, mu = config.learning_rate, config.momentum
    for _ in range(config.epochs):
        order = rng.permutation(len(y))
        epoch_losses = []
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, gw, gb = loss_and_grad(mlp, X[idx], y[idx], config.weight_decay)
            if not np.isfinite(loss):
                raise NonFiniteLoss("training diverged; lower the learning rate")
            for i in range(len(mlp.weights)):
                vel_w[i] = mu * vel_w[i] - lr * gw[i]
                vel_b[i] = mu * vel_b[i] - lr * gb[i]
                mlp.weights[i] = mlp.weights[i] + vel_w[i]
                mlp.biases[i] = mlp.biases[i] + vel_b[i]
            epoch_losses.append(loss)
        mlp.loss_history.append(float(np.mean(epoch_losses)))
    return mlp


def group_kfold(subject_ids: Sequence[str], labels_per_subject: Dict[str, Sequence[int]],
                k: int) -> List[List[str]]:
    """Partition subjects into ``k`` folds balancing the positive-window fraction.

    Subjects are visited by decreasing positive fraction (ties by id) and
    each goes to the currently smallest fold with the lowest running positive
    fraction, so fold sizes never differ by more than one subject.
    """
    subjects = sorted(set(subject_ids))
    if k < 2 or k > len(subjects):
        raise TooFewSubjects(f"cannot split {len(subjects)} subjects into {k} folds")

    def pos_frac(s):
        labels = np.asarray(labels_per_subject.get(s, ()), dtype=float)
        return labels.mean() if labels.size else 0.0

    folds: List[List[str]] = [[] for _ in range(k)]
    pos = np.zeros(k)
    tot = np.zeros(k)
    for s in sorted(subjects, key=lambda s: (-pos_frac(s), s)):
        sizes = np.array([len(f) for f in folds])
        open_folds = np.flatnonzero(sizes == sizes.min())
        frac = np.where(tot[open_folds] > 0, pos[open_folds] / np.maximum(tot[open_folds], 1), 0.0)
        j = int(open_folds[np.argmin(frac)])
        folds[j].append(s)
        labels = labels_per_subject.get(s, ())
        pos[j] += float(np.sum(labels))
        tot[j] += len(labels)
    return folds


@dataclass
class FrEnsemble:
    members: List[Mlp]
    folds: List[List[str]]
    config: MlpConfig
    fold_accuracy: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.members)

    def train_subjects(self, i: int) -> List[str]:
        return sorted(s for j, f in enumerate(self.folds) if j != i for s in f)

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        """Mean member probability for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != N_FEATURES or not np.all(np.isfinite(X)):
            raise NonFiniteFeature(f"expected finite {N_FEATURES}-feature rows")
        return np.mean([m.predict_proba(X) for m in self.members], axis=0)


def _labelled(windows: Sequence[FeatureWindow]) -> List[FeatureWindow]:
    return [w for w in windows if w.fr_label is not None]


def train_ensemble(source_windows: Sequence[FeatureWindow], k: int = 5,
                   config: Optional[MlpConfig] = None) -> FrEnsemble:
    """Train one member per held-out subject fold; member ``i`` uses seed ``config.seed + i``."""
    config = config or MlpConfig()
    windows = _labelled(source_windows)
    by_subject: Dict[str, List[int]] = {}
    for w in windows:
        by_subject.setdefault(w.subject_id, []).append(w.fr_label)
    folds = group_kfold(list(by_subject), by_subject, k)

    X = feature_matrix(windows)
    y = np.array([w.fr_label for w in windows], dtype=float)
    subject = np.array([w.subject_id for w in windows])
    members, accuracy = [], []
    for i, held_out in enumerate(folds):
        test = np.isin(subject, held_out)
        member_cfg = MlpConfig(**{**asdict(config), "seed": config.seed + i})
        mlp = train_mlp(X[~test], y[~test], member_cfg)
        members.append(mlp)
        if test.any():
            accuracy.append(float(np.mean((mlp.predict_proba(X[test]) >= 0.5) == y[test])))
        else:
            accuracy.append(float("nan"))
    return FrEnsemble(members, folds, config, accuracy)


def score(ensemble: FrEnsemble, window) -> float:
    """Average (not majority vote) of the member sigmoid outputs for one window."""
    features = window.features if isinstance(window, FeatureWindow) else window
    return float(ensemble.score_matrix(np.asarray(features, dtype=float)[None, :])[0])


# --------------------------------------------------------------------------
# persistence

def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": " ".join(f"{v:.17g}" for v in a.ravel())}


def _decode(d: dict) -> np.ndarray:
    values = np.array([float(v) for v in d["data"].split()], dtype=float)
    return values.reshape(d["shape"])


def ensemble_to_json(ensemble: FrEnsemble) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": asdict(ensemble.config),
        "folds": ensemble.folds,
        "fold_accuracy": [f"{a:.17g}" for a in ensemble.fold_accuracy],
        "members": [
            {"layers": [{"weights": _encode(W), "bias": _encode(b)}
                        for W, b in zip(m.weights, m.biases)]}
            for m in ensemble.members
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def ensemble_from_json(text: str) -> FrEnsemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a fear-response ensemble file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')}")
    members = [
        Mlp([_decode(layer["weights"]) for layer in m["layers"]],
            [_decode(layer["bias"]) for layer in m["layers"]])
        for m in doc["members"]
    ]
    return FrEnsemble(members, doc["folds"], MlpConfig.from_dict(doc["config"]),
                      [float(a) for a in doc["fold_accuracy"]])


def save_ensemble(ensemble: FrEnsemble, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(ensemble_to_json(ensemble))


def load_ensemble(path: str) -> FrEnsemble:
    with open(path) as fh:
        return ensemble_from_json(fh.read())
