from __future__ import annotations

import json
import subprocess
import sys

import pandas as pd
import pytest

from idpflow import __version__
from idpflow.cli import main, read_csv

from conftest import make_toy


def run(*argv):
    return main([str(a) for a in argv])


def files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_module_entry_point_reports_version():
    out = subprocess.run([sys.executable, "-m", "idpflow", "--version"], capture_output=True, text=True, check=True)
    assert __version__ in out.stdout


def test_ingest_writes_stamped_tables(toy):
    assert run("ingest", "--config", toy) == 0
    out = toy.parent / "run"
    report = json.loads((out / "ingest_report.json").read_text())
    assert report["config_sha256"] and report["corpus_sha256"]
    first = (out / "canonical" / "flows.csv").read_text().splitlines()[0]
    assert first.startswith("# config_sha256=") and "corpus_sha256=" in first
    assert len(read_csv(out / "canonical" / "flows.csv")) == 27


def test_missing_gazetteer_exits_2(toy, capsys):
    (toy.parent / "gazetteer.csv").unlink()
    assert run("ingest", "--config", toy) == 2
    assert "gazetteer.csv" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert run("ingest", "--config", tmp_path / "nope.toml") == 2


def test_unknown_province_exits_3(toy, capsys):
    flows = toy.parent / "flows.csv"
    flows.write_text(flows.read_text() + "2020-02,Narnia,ALPHA,3\n")
    assert run("ingest", "--config", toy) == 3
    err = capsys.readouterr().err
    assert "Narnia" in err and "29" in err


def test_featurize_manifest(toy):
    assert run("featurize", "--config", toy) == 0
    manifest = json.loads((toy.parent / "run" / "features_manifest.json").read_text())
    names = manifest["feature_names"]
    assert names[0] == "date_index" and names[-1] == "ar"
    assert set(names) < set(manifest["columns"])
    assert len(read_csv(toy.parent / "run" / "features.csv")) == 27


def test_baseline_backtest_and_reproducibility(toy, tmp_path):
    assert run("backtest", "--config", toy, "--out", tmp_path / "a") == 0
    assert run("backtest", "--config", toy, "--out", tmp_path / "b") == 0
    metrics = read_csv(tmp_path / "a" / "metrics.csv")
    assert sorted(zip(metrics["model"], metrics["scale"])) == [("HM", "LOG"), ("HM", "RAW"), ("LOCF", "LOG"), ("LOCF", "RAW")]
    assert (metrics["status"] == "ok").all()
    assert files(tmp_path / "a") == files(tmp_path / "b")
    preds = read_csv(tmp_path / "a" / "predictions.csv")
    assert set(preds["month"]) == {2, 3}
    assert preds[preds["model"] == "HM"]["lo"].isna().all()


def test_svm_is_reported_not_implemented(tmp_path):
    cfg = make_toy(tmp_path, models=("HM", "SVM"))
    assert run("backtest", "--config", cfg) == 0
    metrics = read_csv(tmp_path / "run" / "metrics.csv")
    svm = metrics[metrics["model"] == "SVM"]
    assert list(svm["status"]) == ["not_implemented"]
    assert svm["rmse"].isna().all()


def test_model_failure_exits_4(tmp_path, capsys):
    block = '\n[[models]]\nkind = "MLP"\nhyperparameters = { step = 1e9, epochs = 30, nodes = 8 }\n'
    cfg = make_toy(tmp_path, models=(), model_block=block, n_months=4)
    assert run("backtest", "--config", cfg, "--scale", "raw") == 4
    assert "MLP" in capsys.readouterr().err


def test_report_series_and_forest_tables(tmp_path):
    block = '\n[[models]]\nkind = "RF"\nhyperparameters = { n_trees = 10, mtry = 4 }\n'
    cfg = make_toy(tmp_path, destinations=("ALPHA",), n_months=4, models=("HM",), model_block=block)
    assert run("backtest", "--config", cfg) == 0
    assert run("report", "--run", tmp_path / "run") == 0
    rep = tmp_path / "run" / "report"
    series = sorted(p.relative_to(rep / "series").as_posix() for p in (rep / "series").rglob("*.csv"))
    assert series == ["HM_LOG/ALPHA.csv", "HM_RAW/ALPHA.csv", "RF_LOG/ALPHA.csv"]
    hm = read_csv(rep / "series" / "HM_RAW" / "ALPHA.csv")
    assert list(hm.columns) == ["month", "observed", "forecast"]
    rf = read_csv(rep / "series" / "RF_LOG" / "ALPHA.csv")
    assert list(rf.columns) == ["month", "observed", "forecast", "lo", "hi"]
    flows = pd.read_csv(tmp_path / "flows.csv")
    flows["month"] = pd.to_datetime(flows["month"]).dt.month
    totals = flows.groupby("month")["count"].sum()
    assert list(hm["observed"]) == [totals[m] for m in hm["month"]]
    assert (rep / "minimal_depth_RF_LOG.csv").exists()
    inter = read_csv(rep / "interactions_RF_LOG.csv")
    assert inter["reference"].nunique() == 4


def test_report_on_missing_run_exits_2(tmp_path):
    assert run("report", "--run", tmp_path / "nothing") == 2


def test_model_inspect(tmp_path, capsys):
    block = '\n[[models]]\nkind = "RF"\nhyperparameters = { n_trees = 4, mtry = 2 }\n'
    cfg = make_toy(tmp_path, models=(), model_block=block)
    assert run("backtest", "--config", cfg) == 0
    capsys.readouterr()
    assert run("model", "inspect", tmp_path / "run" / "models" / "RF_LOG.pkl") == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "RF" and info["n_trees"] == 4


def test_compare_writes_deltas(tmp_path):
    block = '\n[[models]]\nkind = "GBT"\nhyperparameters = { rounds = 5 }\ngrid = { depth = [2] }\n'
    cfg = make_toy(tmp_path, models=("HM",), model_block=block, n_months=4)
    assert run("compare", "--config", cfg) == 0
    deltas = read_csv(tmp_path / "run" / "raw_vs_log.csv")
    assert list(deltas["model"]) == ["GBT"]
    assert list(deltas.columns) == ["model", "delta_rmse", "delta_mae", "delta_r2", "delta_sign_accuracy"]


def test_synth_round_trip(tmp_path):
    assert run("synth", "--out", tmp_path / "s", "--seed", 4) == 0
    assert run("ingest", "--config", tmp_path / "s" / "config.toml") == 0
    assert (tmp_path / "s" / "run" / "canonical" / "flows.csv").exists()


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["backtest"])
    assert e.value.code == 2
