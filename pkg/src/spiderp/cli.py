"""Command line entry point: ``spiderp <command> [options]``.

Exit codes: 0 on success, 1 on a runtime error (one ``error: Kind: message``
line on stderr), 2 on a usage error. ``SPIDERP_LOG_LEVEL`` sets verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace

import numpy as np

from .errors import SpiderpError
from .fear_features import write_curves_csv, write_static_csv
from .fear_model import load_ensemble, save_ensemble
from .pipeline import (
    PipelineConfig,
    evaluate,
    featurize_entries,
    target_features,
    train_from_manifest,
    write_evaluation,
)
from .signal_core import read_manifest, write_windows_csv
from .synth_data import SynthConfig, gen_cohort


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON; flags override it")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        kwargs = {"dest": f"cfg_{f.name}", "default": None}
        if f.name == "baseline_mode":
            kwargs["choices"] = ("mean", "mode")
            flag = "--baseline"
        else:
            kwargs["type"] = type(f.default)
        p.add_argument(flag, **kwargs)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    overrides = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(PipelineConfig)}
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_synth(args) -> None:
    cfg = SynthConfig.load(args.config) if args.config else SynthConfig()
    overrides = {"seed": args.seed, "n_source_subjects": args.n_source,
                 "n_target_subjects": args.n_target, "record_duration_s": args.duration}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    manifest = gen_cohort(cfg, args.out)
    print(manifest)


def cmd_featurize(args) -> None:
    cfg = _config(args)
    windows = featurize_entries(read_manifest(args.manifest), cfg.grid_hz)
    write_windows_csv(args.out, [w for ws in windows.values() for w in ws])
    print(f"{sum(len(ws) for ws in windows.values())} windows -> {args.out}")


def cmd_train_fr(args) -> None:
    cfg = _config(args)
    ensemble = train_from_manifest(args.manifest, cfg)
    save_ensemble(ensemble, args.out)
    for i, acc in enumerate(ensemble.fold_accuracy):
        print(f"fold {i}: held-out accuracy {acc:.4f}")
    print(f"mean fold accuracy {np.nanmean(ensemble.fold_accuracy):.4f}")


def cmd_curves(args) -> None:
    cfg = _config(args)
    curves, rows = target_features(args.manifest, load_ensemble(args.model), cfg)
    os.makedirs(args.out, exist_ok=True)
    write_curves_csv(os.path.join(args.out, "curves.csv"), curves)
    write_static_csv(os.path.join(args.out, "static_features.csv"), rows)
    print(f"{len(curves)} curves -> {args.out}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    curves, rows = target_features(args.manifest, load_ensemble(args.model), cfg)
    report = evaluate(rows, cfg)
    write_evaluation(args.out, report, curves, rows)
    _print_summary(report.to_dict())


def _print_summary(doc: dict) -> None:
    print(f"subjects: {doc['n_subjects']}")
    print(f"{'method':<10} {'MAE':>8} {'MAPE%':>8} {'acc':>6}")
    rows = [("spiderp", doc)] + sorted(doc["baselines"].items())
    for name, d in rows:
        print(f"{name:<10} {d['mae']:>8.2f} {d['mape_percent']:>8.1f} {d['binary_accuracy']:>6.2f}")


def cmd_report(args) -> None:
    with open(args.report) as fh:
        _print_summary(json.load(fh))


def cmd_dump_config(args) -> None:
    text = _config(args).dumps()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spiderp", description="Fear-response based PTSD severity pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="synth config JSON")
    p.add_argument("--n-source", type=int)
    p.add_argument("--n-target", type=int)
    p.add_argument("--duration", type=int, help="record length in seconds")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="write the 12-feature windows of every record")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train-fr", help="train the fear-response ensemble")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_fr)

    for name, func, helptext in (("curves", cmd_curves, "export fear curves and static features"),
                                 ("evaluate", cmd_evaluate, "leave-one-out PCL-M evaluation")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--manifest", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--out", required=True)
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="summarize a report.json")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("dump-config", help="print the effective pipeline config")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SPIDERP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (SpiderpError, ValueError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
