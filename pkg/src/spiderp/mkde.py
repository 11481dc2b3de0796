"""Mixed Gaussian/Bernoulli product-kernel density estimate over (features, PCL-M).

The joint density of standardized continuous features, binary features and
the standardized label is a mean of product kernels centred on the training
rows. A single bandwidth ``sigma`` drives every factor: Gaussian kernels use
it as their scale and Bernoulli kernels use ``p = 0.5 + sqrt(0.25 - sigma**2)``.
Reading the joint density along the PCL-M grid for a fixed feature vector
gives the predicted severity distribution.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import (
    NonBinaryInput,
    NonFiniteInput,
    OutOfRange,
    TooFewSamples,
    ZeroVarianceFeature,
)

CONTINUOUS = "continuous"
BINARY = "binary"
PCLM_MIN, PCLM_MAX = 17, 85
PCLM_GRID = np.arange(PCLM_MIN, PCLM_MAX + 1)
PTSD_THRESHOLD = 36
SIGMA_GRID = 0.005 * np.arange(1, 100)
LOG_FLOOR = math.log(1e-300)

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def rbf(u, v, nu: float):
    """Gaussian density with standard deviation ``nu`` evaluated at ``u - v``."""
    d = (np.asarray(u, dtype=float) - np.asarray(v, dtype=float)) / nu
    return np.exp(-0.5 * d * d) / (nu * math.sqrt(2 * math.pi))


def bernoulli_k(a, b, p: float):
    """``p`` where the binary values agree, ``1 - p`` where they differ."""
    a = np.asarray(a)
    b = np.asarray(b)
    if not (np.isin(a, (0, 1)).all() and np.isin(b, (0, 1)).all()):
        raise NonBinaryInput("Bernoulli kernel arguments must be 0 or 1")
    return np.where(a == b, p, 1.0 - p)


def bernoulli_p(sigma: float) -> float:
    return 0.5 + math.sqrt(0.25 - sigma * sigma)


@dataclass(frozen=True)
class PclmDensity:
    grid: np.ndarray
    probs: np.ndarray

    def to_pclm(self) -> int:
        return to_pclm(self)


def to_pclm(density: PclmDensity) -> int:
    """Grid argmax; the smallest PCL-M wins ties."""
    return int(density.grid[int(np.argmax(density.probs))])


def to_binary(pclm: int) -> int:
    """1 (PTSD) when ``pclm >= 36``, else 0."""
    if not PCLM_MIN <= pclm <= PCLM_MAX:
        raise OutOfRange(f"PCL-M {pclm} outside {PCLM_MIN}..{PCLM_MAX}")
    return int(pclm >= PTSD_THRESHOLD)


def _check_kinds(kinds: Sequence[str]) -> Tuple[str, ...]:
    kinds = tuple(kinds)
    if any(k not in (CONTINUOUS, BINARY) for k in kinds):
        raise ValueError(f"kernel kinds must be {CONTINUOUS!r} or {BINARY!r}")
    if BINARY in kinds and CONTINUOUS in kinds[kinds.index(BINARY):]:
        raise ValueError("continuous features must precede binary ones")
    return kinds


@dataclass(frozen=True)
class MkdeModel:
    X: np.ndarray          # standardized continuous columns, raw binary columns
    y: np.ndarray          # standardized labels
    kinds: Tuple[str, ...]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    sigma: float

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def continuous(self) -> np.ndarray:
        return np.array([k == CONTINUOUS for k in self.kinds], dtype=bool)

    @classmethod
    def build(cls, X_raw, y_raw, kinds: Sequence[str], sigma: float,
              strict: bool = False) -> "MkdeModel":
        """Standardize with the training statistics and fix the bandwidth.

        With ``strict`` a zero-variance continuous feature column raises;
        otherwise its scale falls back to 1. A constant label always gets scale 1.
        """
        kinds = _check_kinds(kinds)
        X = np.atleast_2d(np.asarray(X_raw, dtype=float))
        y = np.asarray(y_raw, dtype=float).ravel()
        if X.shape != (y.size, len(kinds)):
            raise ValueError(f"X has shape {X.shape}, expected ({y.size}, {len(kinds)})")
        if not 0 < sigma < 0.5:
            raise ValueError(f"sigma must lie in (0, 0.5), got {sigma}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise NonFiniteInput("training data contain NaN or inf")
        cont = np.array([k == CONTINUOUS for k in kinds], dtype=bool)
        if not np.isin(X[:, ~cont], (0, 1)).all():
            raise NonBinaryInput("binary training columns must hold 0 or 1")

        mean = np.where(cont, X.mean(axis=0), 0.0)
        std = np.where(cont, X.std(axis=0), 1.0)
        y_mean, y_std = float(y.mean()), float(y.std())
        if strict and np.any(std[cont] == 0):
            raise ZeroVarianceFeature("a continuous feature is constant")
        std = np.where(std > 0, std, 1.0)
        y_std = y_std if y_std > 0 else 1.0
        return cls((X - mean) / std, (y - y_mean) / y_std, kinds, mean, std, y_mean, y_std,
                   float(sigma))

    def standardize_x(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_scale

    def standardize_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale


def _log_feature_kernels(model: MkdeModel, xq: np.ndarray, use: np.ndarray) -> np.ndarray:
    """Log of the product of the used feature factors, one value per training row."""
    sigma = model.sigma
    cont = model.continuous & use
    binary = ~model.continuous & use
    out = np.zeros(model.n_samples)
    if cont.any():
        d = model.X[:, cont] - xq[cont]
        out += -0.5 * np.sum(d * d, axis=1) / sigma**2 - cont.sum() * (math.log(sigma) + _LOG_SQRT_2PI)
    if binary.any():
        p = bernoulli_p(sigma)
        agree = np.sum(model.X[:, binary] == xq[binary], axis=1)
        out += agree * math.log(p) + (binary.sum() - agree) * math.log1p(-p)
    return out


def _log_joint(model: MkdeModel, xq_std: np.ndarray, y_std: np.ndarray, use: np.ndarray) -> np.ndarray:
    sigma = model.sigma
    log_kx = _log_feature_kernels(model, xq_std, use)
    d = y_std[:, None] - model.y[None, :]
    log_ky = -0.5 * d * d / sigma**2 - math.log(sigma) - _LOG_SQRT_2PI
    return logsumexp(log_ky + log_kx[None, :], axis=1) - math.log(model.n_samples)


def _query(model: MkdeModel, x) -> Tuple[np.ndarray, np.ndarray]:
    """Standardized query plus a mask of the features that are present."""
    raw = np.array([np.nan if v is None else float(v) for v in np.ravel(np.asarray(x, dtype=object))])
    if raw.size != len(model.kinds):
        raise ValueError(f"query has {raw.size} features, model expects {len(model.kinds)}")
    use = ~np.isnan(raw)
    if np.any(np.isinf(raw)):
        raise NonFiniteInput("query contains inf")
    binary = ~model.continuous & use
    if not np.isin(raw[binary], (0, 1)).all():
        raise NonBinaryInput("binary query features must be 0 or 1")
    return np.where(use, model.standardize_x(np.where(use, raw, 0.0)), 0.0), use


def log_density_on_grid(model: MkdeModel, x, grid=PCLM_GRID) -> np.ndarray:
    """Log joint density at ``(x, y)`` for each ``y`` in ``grid``; missing features skipped."""
    xq, use = _query(model, x)
    return _log_joint(model, xq, model.standardize_y(grid), use)


def density_on_grid(model: MkdeModel, x, grid=PCLM_GRID) -> np.ndarray:
    """Unnormalized ``(1/M) sum_m K_y K_x`` in standardized coordinates."""
    return np.exp(log_density_on_grid(model, x, grid))


def _normalized(log_values: np.ndarray) -> PclmDensity:
    probs = np.exp(log_values - logsumexp(log_values))
    return PclmDensity(PCLM_GRID.copy(), probs / probs.sum())


def predict_density(model: MkdeModel, x) -> PclmDensity:
    xq = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xq)):
        raise NonFiniteInput("query features must be finite")
    return _normalized(log_density_on_grid(model, xq))


def predict_marginal(model: MkdeModel, x_partial) -> PclmDensity:
    """Predict with ``None``/NaN entries marginalized out.

    Every kernel factor integrates (or sums) to one, so dropping a missing
    feature's factor is exact marginalization.
    """
    return _normalized(log_density_on_grid(model, x_partial))


def loo_log_likelihood(model: MkdeModel, sigma: float) -> float:
    """Sum over training rows of log P(y_m, x_m) estimated without row m."""
    m = model.n_samples
    cont = model.continuous
    Z = np.column_stack([model.X[:, cont], model.y])
    d2 = np.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=2)
    n_gauss = Z.shape[1]
    log_k = -0.5 * d2 / sigma**2 - n_gauss * (math.log(sigma) + _LOG_SQRT_2PI)
    B = model.X[:, ~cont]
    if B.shape[1]:
        p = bernoulli_p(sigma)
        agree = np.sum(B[:, None, :] == B[None, :, :], axis=2)
        log_k = log_k + agree * math.log(p) + (B.shape[1] - agree) * math.log1p(-p)
    np.fill_diagonal(log_k, -np.inf)
    per_row = logsumexp(log_k, axis=1) - math.log(m - 1)
    return float(np.sum(np.maximum(per_row, LOG_FLOOR)))


def select_bandwidth(sigmas: np.ndarray, scores: np.ndarray) -> float:
    """Best-scoring bandwidth; exact ties go to the larger value."""
    scores = np.asarray(scores, dtype=float)
    best = np.flatnonzero(scores == scores.max())
    return float(np.asarray(sigmas)[best[-1]])


def fit(X_raw, y_raw, kinds: Sequence[str], sigma_grid: Optional[np.ndarray] = None) -> MkdeModel:
    """Standardize and pick ``sigma`` by leave-one-out likelihood over the grid."""
    y = np.asarray(y_raw, dtype=float).ravel()
    if y.size < 2:
        raise TooFewSamples("bandwidth search needs at least two training rows")
    grid = SIGMA_GRID if sigma_grid is None else np.asarray(sigma_grid, dtype=float)
    base = MkdeModel.build(X_raw, y, kinds, float(grid[0]), strict=True)
    scores = np.array([loo_log_likelihood(base, s) for s in grid])
    sigma = select_bandwidth(grid, scores)
    return MkdeModel(base.X, base.y, base.kinds, base.x_mean, base.x_scale,
                     base.y_mean, base.y_scale, sigma)


def write_density_csv(path: str, density: PclmDensity) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pclm", "probability"])
        for g, p in zip(density.grid, density.probs):
            writer.writerow([int(g), f"{p:.17g}"])
