import csv
import filecmp
import json
import os

import pytest

from spiderp.cli import main
from spiderp.pipeline import PipelineConfig
from spiderp.signal_core import load_record, read_manifest, write_manifest

FAST = ["--epochs", "5", "--batch-size", "64", "--k", "3"]


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "cohort"
    assert main(["synth", "--seed", "3", "--out", str(out), "--n-source", "6",
                 "--n-target", "8", "--duration", "120"]) == 0
    return out


@pytest.fixture(scope="module")
def model(cohort, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "model.frm"
    assert main(["train-fr", "--manifest", str(cohort / "manifest.csv"), "--out", str(path)] + FAST) == 0
    return path


def test_synth_deterministic(cohort, tmp_path):
    again = tmp_path / "again"
    main(["synth", "--seed", "3", "--out", str(again), "--n-source", "6",
          "--n-target", "8", "--duration", "120"])
    for sub in ("", "signals", "annotations"):
        names = sorted(os.listdir(cohort / sub))
        assert names == sorted(os.listdir(again / sub))
        files = [n for n in names if os.path.isfile(cohort / sub / n)]
        _, mismatch, errors = filecmp.cmpfiles(cohort / sub, again / sub, files, shallow=False)
        assert not mismatch and not errors


def test_synth_requires_out(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--seed", "7"])
    assert exc.value.code == 2


def test_synth_manifest_loads(cohort):
    for entry in read_manifest(str(cohort / "manifest.csv")):
        load_record(entry)


def test_train_prints_fold_accuracy(cohort, tmp_path, capsys):
    path = tmp_path / "m.frm"
    assert main(["train-fr", "--manifest", str(cohort / "manifest.csv"), "--out", str(path)] + FAST) == 0
    out = capsys.readouterr().out
    assert out.count("held-out accuracy") == 3
    assert "mean fold accuracy" in out


def test_train_rerun_byte_identical(cohort, model, tmp_path):
    again = tmp_path / "again.frm"
    main(["train-fr", "--manifest", str(cohort / "manifest.csv"), "--out", str(again)] + FAST)
    assert filecmp.cmp(model, again, shallow=False)


def test_train_without_annotations_fails(cohort, tmp_path, capsys):
    entries = read_manifest(str(cohort / "manifest.csv"))
    rows = [{"id": e.subject_id, "role": e.role, "sex": e.sex, "pclm": e.pclm, "fs": e.fs,
             "ecg_path": e.ecg_path, "gsr_path": e.gsr_path, "annotation_path": None}
            for e in entries]
    manifest = tmp_path / "bare.csv"
    write_manifest(str(manifest), rows)
    code = main(["train-fr", "--manifest", str(manifest), "--out", str(tmp_path / "x.frm")] + FAST)
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: DegenerateLabels:")


def test_missing_manifest_error_line(tmp_path, capsys):
    code = main(["train-fr", "--manifest", str(tmp_path / "none.csv"), "--out", str(tmp_path / "m")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: MissingFile:")


def test_evaluate_outputs(cohort, model, tmp_path):
    out = tmp_path / "eval"
    assert main(["evaluate", "--manifest", str(cohort / "manifest.csv"), "--model", str(model),
                 "--out", str(out)] + FAST) == 0
    report = json.loads((out / "report.json").read_text())
    for key in ("mae", "mape_percent", "binary_accuracy", "confusion", "baselines"):
        assert key in report
    c = report["confusion"]
    assert report["binary_accuracy"] == (c["tp"] + c["tn"]) / report["n_subjects"]
    assert len(os.listdir(out / "densities")) == report["n_subjects"] == 8
    with open(out / "densities" / "tgt000.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 69 and abs(sum(float(r["probability"]) for r in rows) - 1) < 1e-9
    assert (out / "curves.csv").exists() and (out / "static_features.csv").exists()

    again = tmp_path / "eval2"
    main(["evaluate", "--manifest", str(cohort / "manifest.csv"), "--model", str(model),
          "--out", str(again)] + FAST)
    assert filecmp.cmp(out / "report.json", again / "report.json", shallow=False)


def test_curves_command(cohort, model, tmp_path):
    assert main(["curves", "--manifest", str(cohort / "manifest.csv"), "--model", str(model),
                 "--out", str(tmp_path)]) == 0
    with open(tmp_path / "static_features.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 8


def test_featurize_command(cohort, tmp_path):
    out = tmp_path / "windows.csv"
    assert main(["featurize", "--manifest", str(cohort / "manifest.csv"), "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert len(header) == 15


def test_report_command(cohort, model, tmp_path, capsys):
    main(["evaluate", "--manifest", str(cohort / "manifest.csv"), "--model", str(model),
          "--out", str(tmp_path)] + FAST)
    capsys.readouterr()
    assert main(["report", "--report", str(tmp_path / "report.json")]) == 0
    assert "constant" in capsys.readouterr().out


def test_config_round_trip_and_precedence(tmp_path, capsys):
    first = tmp_path / "c1.json"
    main(["dump-config", "--out", str(first), "--epochs", "7"])
    text = first.read_text()
    assert PipelineConfig.loads(text).dumps() == text
    assert PipelineConfig.loads(text).epochs == 7
    main(["dump-config", "--config", str(first), "--k", "4"])
    cfg = PipelineConfig.loads(capsys.readouterr().out)
    assert (cfg.epochs, cfg.k, cfg.n_units) == (7, 4, 16)


def test_default_config_matches_table():
    cfg = PipelineConfig()
    assert (cfg.n_units, cfg.depth, cfg.epochs, cfg.batch_size) == (16, 6, 100, 512)
    assert (cfg.learning_rate, cfg.momentum, cfg.weight_decay) == (0.01, 0.9, 0.001)
    assert len(cfg.sigma_grid) == 99 and cfg.sigma_grid[-1] == pytest.approx(0.495)
