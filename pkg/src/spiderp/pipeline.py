"""Stage orchestration shared by the command line and the acceptance suite."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import mkde
from .errors import DegenerateLabels, ManifestError
from .eval_harness import DEFAULT_KINDS, EvalReport, loo_evaluate, write_confusion_csv
from .fear_features import (
    FearCurve,
    StaticFeatures,
    assemble,
    build_curve,
    write_curves_csv,
    write_static_csv,
)
from .fear_model import FrEnsemble, MlpConfig, train_ensemble
from .signal_core import (
    DEFAULT_GRID_HZ,
    FeatureWindow,
    ManifestEntry,
    load_record,
    process_record,
    read_manifest,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    n_units: int = 16
    depth: int = 6
    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.001
    seed: int = 0
    k: int = 5
    grid_hz: float = DEFAULT_GRID_HZ
    sigma_step: float = 0.005
    baseline_mode: str = "mean"

    def __post_init__(self):
        if self.baseline_mode not in ("mean", "mode"):
            raise ValueError("baseline_mode must be 'mean' or 'mode'")
        if not 0 < self.sigma_step < 0.5:
            raise ValueError("sigma_step must lie in (0, 0.5)")

    @property
    def mlp(self) -> MlpConfig:
        return MlpConfig.from_dict(asdict(self))

    @property
    def sigma_grid(self) -> np.ndarray:
        n = int(np.ceil(0.5 / self.sigma_step))
        grid = self.sigma_step * np.arange(1, n)
        return grid[grid < 0.5]

    def dumps(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: Optional[str]) -> "PipelineConfig":
        if path is None:
            return cls()
        with open(path) as fh:
            return cls.loads(fh.read())


def featurize_entries(entries: Sequence[ManifestEntry], grid_hz: float) -> Dict[str, List[FeatureWindow]]:
    out = {}
    for entry in entries:
        log.info("featurizing %s", entry.subject_id)
        out[entry.subject_id] = process_record(load_record(entry), grid_hz)
    return out


def train_from_manifest(manifest: str, config: PipelineConfig) -> FrEnsemble:
    sources = [e for e in read_manifest(manifest) if e.role == "source"]
    if not sources:
        raise ManifestError("manifest lists no source subjects")
    if any(e.annotation_path is None for e in sources):
        raise DegenerateLabels("every source subject needs an annotation file")
    windows = featurize_entries(sources, config.grid_hz)
    flat = [w for ws in windows.values() for w in ws]
    return train_ensemble(flat, config.k, config.mlp)


def target_features(manifest: str, ensemble: FrEnsemble, config: PipelineConfig
                    ) -> Tuple[List[FearCurve], List[Tuple[str, StaticFeatures, Optional[int]]]]:
    targets = [e for e in read_manifest(manifest) if e.role == "target"]
    if not targets:
        raise ManifestError("manifest lists no target subjects")
    windows = featurize_entries(targets, config.grid_hz)
    curves, rows = [], []
    for entry in targets:
        curve = build_curve(ensemble, windows[entry.subject_id])
        curves.append(curve)
        rows.append((entry.subject_id, assemble(curve, entry.sex), entry.pclm))
    return curves, rows


def evaluate(rows, config: PipelineConfig) -> EvalReport:
    labelled = [r for r in rows if r[2] is not None]
    if len(labelled) != len(rows):
        raise ManifestError("every target subject needs a PCL-M label for evaluation")
    return loo_evaluate(labelled, DEFAULT_KINDS, config.sigma_grid, config.baseline_mode)


def write_evaluation(out_dir: str, report: EvalReport, curves, rows) -> None:
    os.makedirs(os.path.join(out_dir, "densities"), exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    write_confusion_csv(os.path.join(out_dir, "confusion.csv"), report)
    for s in report.subjects:
        mkde.write_density_csv(os.path.join(out_dir, "densities", f"{s.subject_id}.csv"), s.density)
    write_curves_csv(os.path.join(out_dir, "curves.csv"), curves)
    write_static_csv(os.path.join(out_dir, "static_features.csv"), rows)
