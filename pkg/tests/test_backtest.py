from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
import pytest

from idpflow.backtest import (
    EvaluationWindow,
    ZeroVarianceObserved,
    compare_raw_vs_log,
    compute_metrics,
    mae,
    metrics_by_month,
    r2,
    rmse,
    run_backtest,
    sign_accuracy,
    sign_reference,
)
from idpflow.config import featurize, ingest, load_config
from idpflow.errors import EmptyTraining, ValidationError
from idpflow.models.base import ForecasterSpec

from conftest import make_toy
from oracles import metrics_single_pass


def test_metric_values():
    pred, obs = np.array([1.0, 2.0, 4.0]), np.array([1.0, 3.0, 2.0])
    assert rmse(pred, obs) == pytest.approx(np.sqrt(5 / 3))
    assert mae(pred, obs) == pytest.approx(1.0)
    assert r2(obs, obs) == 1.0
    assert r2(np.full(3, obs.mean()), obs) == pytest.approx(0.0)


def test_metrics_agree_with_single_pass_oracle():
    rng = np.random.default_rng(0)
    pred, obs = rng.gamma(2, 10, 500), rng.gamma(2, 10, 500)
    ref = np.where(rng.random(500) < 0.2, np.nan, rng.gamma(2, 10, 500))
    want_rmse, want_mae, want_r2, want_acc = metrics_single_pass(pred, obs, ref)
    assert rmse(pred, obs) == pytest.approx(want_rmse, rel=1e-12)
    assert mae(pred, obs) == pytest.approx(want_mae, rel=1e-12)
    assert r2(pred, obs) == pytest.approx(want_r2, rel=1e-12)
    assert sign_accuracy(pred, obs, ref)[0] == pytest.approx(want_acc)


def test_r2_zero_variance():
    with pytest.warns(ZeroVarianceObserved):
        assert np.isnan(r2([1.0, 2.0], [3.0, 3.0]))


@pytest.mark.parametrize("pred,obs", [([1.0], [1.0, 2.0]), ([], []), ([[1.0]], [[1.0]])])
def test_metric_input_checks(pred, obs):
    with pytest.raises(ValidationError):
        rmse(pred, obs)


def test_sign_accuracy():
    ref = np.array([5.0, 5.0, 5.0, np.nan])
    acc, n = sign_accuracy([6.0, 4.0, 5.0, 1.0], [7.0, 6.0, 5.0, 0.0], ref)
    assert n == 3 and acc == pytest.approx(2 / 3)
    obs = np.array([3.0, 9.0, 1.0])
    assert sign_accuracy(obs, obs, [2.0, 9.0, 4.0]) == (1.0, 3)
    assert np.isnan(sign_accuracy([1.0], [1.0], [np.nan])[0])


def test_sign_accuracy_ignores_round_off_above_reference():
    ref = np.array([7.0, 100.0])
    noisy = np.expm1(np.log1p(ref)) * (1 + 1e-15)
    assert sign_accuracy(noisy, ref, ref) == (1.0, 2)


def test_sign_reference_is_latest_earlier_observation():
    hist = pd.DataFrame({"month": [1, 3, 2], "origin": ["A"] * 3, "destination": ["B"] * 3, "count": [4, 9, 6]})
    ref = sign_reference(hist, ["A", "A", "A", "C"], ["B", "B", "B", "A"], np.array([1, 3, 5, 4]))
    assert np.isnan(ref[0]) and ref[1] == 6 and ref[2] == 9 and np.isnan(ref[3])


@pytest.mark.parametrize("first,last", [(1, 3), (4, 3), (2, 99)])
def test_window_validation(first, last):
    with pytest.raises(ValidationError):
        EvaluationWindow(first, last).validate(8)


def test_tuning_policy_validation(toy_data):
    with pytest.raises(ValidationError):
        run_backtest(ForecasterSpec("HM"), toy_data, EvaluationWindow(5, 5), tuning_policy="never")


def test_empty_training(toy_data):
    late = toy_data.subset(toy_data.month >= 5)
    with pytest.raises(EmptyTraining):
        run_backtest(ForecasterSpec("RF", {"n_trees": 3}), late, EvaluationWindow(5, 5))


def test_unobserved_months_are_skipped(toy_data):
    gap = toy_data.subset(toy_data.month != 6)
    res = run_backtest(ForecasterSpec("LOCF"), gap, EvaluationWindow(5, 7))
    assert [int(b.month[0]) for b in res.batches] == [5, 7]


def test_metrics_are_pooled_over_months(toy_data):
    res = run_backtest(ForecasterSpec("HM"), toy_data, EvaluationWindow(4, 8))
    by_month = metrics_by_month(res.batches, toy_data.history)
    assert len(by_month) == 5
    assert res.metrics.n_scored == by_month["n_scored"].sum()
    pooled = np.sqrt((by_month["rmse"] ** 2 * by_month["n_scored"]).sum() / by_month["n_scored"].sum())
    assert res.metrics.rmse == pytest.approx(pooled)
    assert compute_metrics(res.batches, toy_data.history) == res.metrics


def test_tuning_once_versus_every(toy_data):
    spec = ForecasterSpec("RF", {"n_trees": 5}, 0, "LOG", {"mtry": [1, 6]})
    once = run_backtest(spec, toy_data, EvaluationWindow(5, 7), "once", folds=3)
    every = run_backtest(spec, toy_data, EvaluationWindow(5, 7), "every", folds=3)
    assert list(once.tuned) == [5]
    assert list(every.tuned) == [5, 6, 7]
    assert every.tuned[5] == once.tuned[5]


def test_compare_raw_vs_log(toy_data):
    spec = ForecasterSpec("GBT", {"rounds": 10})
    deltas = compare_raw_vs_log(spec, toy_data, EvaluationWindow(6, 8))
    assert set(deltas) == {"rmse", "mae", "r2", "sign_accuracy"}
    raw = run_backtest(ForecasterSpec("GBT", {"rounds": 10}, target_scale="RAW"), toy_data, EvaluationWindow(6, 8))
    logm = run_backtest(spec, toy_data, EvaluationWindow(6, 8))
    assert deltas["rmse"] == pytest.approx(raw.metrics.rmse - logm.metrics.rmse)
    with pytest.raises(ValidationError):
        compare_raw_vs_log(ForecasterSpec("HM"), toy_data, EvaluationWindow(6, 8))


def _forecast_at(cfg_path, t, kind):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = load_config(cfg_path)
        data, _ = featurize(cfg, ingest(cfg))
    spec = ForecasterSpec(kind, {"n_trees": 10} if kind == "RF" else {})
    return run_backtest(spec, data, EvaluationWindow(t, t)).batches[0].point


@pytest.mark.parametrize("kind", ["HM", "LOCF", "RF"])
def test_earlier_months_do_influence_forecasts(tmp_path, kind):
    """Negative control for the leakage check: history before t must matter."""
    cfg = make_toy(tmp_path, n_months=4)
    before = _forecast_at(cfg, 4, kind)
    flows = pd.read_csv(tmp_path / "flows.csv")
    flows.loc[flows["month"] == "2020-03", "count"] += 500
    flows.to_csv(tmp_path / "flows.csv", index=False)
    after = _forecast_at(cfg, 4, kind)
    assert not np.allclose(before, after)
