"""Rolling-origin one-month-ahead evaluation and its metrics."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .errors import EmptyTraining, ModelError, ValidationError
from .featurize import FeatureMatrix
from .models.base import BASELINES, ForecastBatch, Forecaster, ForecasterSpec, tune

log = logging.getLogger(__name__)

TUNING_POLICIES = ("once", "every")


class ZeroVarianceObserved(UserWarning):
    """R^2 requested on an observed vector with no variance."""


def rmse(pred, obs) -> float:
    pred, obs = _pair(pred, obs)
    return math.sqrt(float(np.sum((pred - obs) ** 2)) / len(obs))


def mae(pred, obs) -> float:
    pred, obs = _pair(pred, obs)
    return float(np.sum(np.abs(pred - obs))) / len(obs)


def r2(pred, obs) -> float:
    pred, obs = _pair(pred, obs)
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0:
        warnings.warn("observed values have zero variance; R^2 undefined", ZeroVarianceObserved)
        return float("nan")
    return 1.0 - float(np.sum((pred - obs) ** 2)) / ss_tot


def _pair(pred, obs):
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape or pred.ndim != 1 or len(obs) == 0:
        raise ValidationError(f"metric inputs must be equal-length non-empty vectors, got {pred.shape} and {obs.shape}")
    return pred, obs


def sign_accuracy(pred, obs, reference, tie_rtol: float = 1e-12) -> tuple[float, int]:
    """Share of rows where 'pred > reference' agrees with 'obs > reference'.

    Rows whose reference is NaN (no earlier observation) are skipped. A
    prediction within ``tie_rtol`` of the reference counts as "no increase",
    so a persistence forecast pushed through log1p/expm1 scores the same as
    the exact one. Returns the accuracy (NaN when nothing is scored) and the
    number of scored rows.
    """
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    ref = np.asarray(reference, dtype=float)
    ok = ~np.isnan(ref)
    n = int(ok.sum())
    if n == 0:
        return float("nan"), 0
    p, o, r = pred[ok], obs[ok], ref[ok]
    up = (p > r) & ~np.isclose(p, r, rtol=tie_rtol, atol=0.0)
    hit = up == (o > r)
    return float(hit.sum()) / n, n


def sign_reference(history: pd.DataFrame, origin, destination, month) -> np.ndarray:
    """Most recent observed flow of each pair strictly before ``month`` (NaN if none)."""
    h = history.sort_values(["origin", "destination", "month"], kind="mergesort")
    series = {
        key: (h["month"].to_numpy()[idx], h["count"].to_numpy(float)[idx])
        for key, idx in h.groupby(["origin", "destination"], sort=False).indices.items()
    }
    out = np.full(len(month), np.nan)
    for i, key in enumerate(zip(origin, destination)):
        s = series.get(key)
        if s is None:
            continue
        k = np.searchsorted(s[0], month[i], side="left")
        if k:
            out[i] = s[1][k - 1]
    return out


@dataclass
class MetricSet:
    rmse: float
    mae: float
    r2: float
    rmse_log: float
    mae_log: float
    r2_log: float
    sign_accuracy: float
    n_scored: int
    n_sign_scored: int

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_COLUMNS = ["rmse", "mae", "r2", "rmse_log", "mae_log", "r2_log", "sign_accuracy", "n_scored", "n_sign_scored"]


def pool(batches: list[ForecastBatch]) -> dict[str, np.ndarray]:
    cat = lambda name: np.concatenate([getattr(b, name) for b in batches]) if batches else np.zeros(0)
    return {k: cat(k) for k in ("month", "origin", "destination", "observed", "point", "point_log")}


def compute_metrics(batches: list[ForecastBatch], history: pd.DataFrame) -> MetricSet:
    """Pooled metrics over every forecast row of every batch."""
    p = pool(batches)
    obs, pred = p["observed"], p["point"]
    obs_log = np.log1p(obs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVarianceObserved)
        r2_flow, r2_log = r2(pred, obs), r2(p["point_log"], obs_log)
    ref = sign_reference(history, p["origin"], p["destination"], p["month"])
    acc, n_sign = sign_accuracy(pred, obs, ref)
    return MetricSet(
        rmse(pred, obs), mae(pred, obs), r2_flow,
        rmse(p["point_log"], obs_log), mae(p["point_log"], obs_log), r2_log,
        acc, len(obs), n_sign,
    )


def metrics_by_month(batches: list[ForecastBatch], history: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for b in batches:
        m = compute_metrics([b], history)
        rows.append({"month": int(b.month[0]), **m.as_dict()})
    return pd.DataFrame(rows, columns=["month"] + METRIC_COLUMNS)


@dataclass
class EvaluationWindow:
    first: int
    last: int
    country: str = ""

    def validate(self, n_months: int) -> None:
        if self.first < 2:
            raise ValidationError(f"first forecast month must be >= 2, got {self.first}")
        if self.last > n_months:
            raise ValidationError(f"last forecast month {self.last} exceeds dataset end {n_months}")
        if self.last < self.first:
            raise ValidationError(f"empty evaluation window {self.first}..{self.last}")

    @property
    def months(self) -> range:
        return range(self.first, self.last + 1)


DEFAULT_FIRST_MONTH = {"SYR": 5, "YEM": 23}


@dataclass
class BacktestResult:
    spec: ForecasterSpec
    batches: list[ForecastBatch]
    metrics: MetricSet
    tuned: dict[int, dict] = field(default_factory=dict)
    final_model: Forecaster | None = None


def run_backtest(
    spec: ForecasterSpec,
    data: FeatureMatrix,
    window: EvaluationWindow,
    tuning_policy: str = "once",
    level: float = 0.95,
    folds: int = 5,
) -> BacktestResult:
    """Fit on months < t, forecast month t, for each t in the window.

    Hyperparameters come from k-fold CV on the training rows: once at the
    first origin (``once``) or at every origin (``every``). Specs without a
    grid keep their fixed hyperparameters.
    """
    if tuning_policy not in TUNING_POLICIES:
        raise ValidationError(f"tuning policy must be one of {TUNING_POLICIES}")
    n_months = int(max(data.history["month"].max(), data.month.max() if len(data) else 0))
    window.validate(n_months)
    grid = spec.grid
    batches: list[ForecastBatch] = []
    tuned: dict[int, dict] = {}
    chosen: dict | None = None
    model = None
    for t in window.months:
        train = data.before(t)
        test = data.subset(data.month == t)
        if len(test) == 0:
            log.info("no observations at month %d; skipped", t)
            continue
        if spec.kind in BASELINES:
            if len(train.history) == 0:
                raise EmptyTraining(t)
        elif len(train) == 0:
            raise EmptyTraining(t)
        try:
            run_spec = spec
            if grid:
                if chosen is None or tuning_policy == "every":
                    chosen = tune(spec, train, grid, k=folds)
                    tuned[t] = chosen
                run_spec = spec.with_params(**chosen)
            model = Forecaster(run_spec).fit(train)
            batches.append(model.predict(test, level))
        except ModelError as e:
            err = ModelError(f"{spec.kind} ({spec.target_scale}) at forecast month {t}: {e}")
            err.month = t
            raise err from e
    if not batches:
        raise ValidationError("evaluation window contains no observed rows")
    return BacktestResult(spec, batches, compute_metrics(batches, data.history), tuned, model)


def compare_raw_vs_log(spec: ForecasterSpec, data: FeatureMatrix, window: EvaluationWindow, **kw) -> dict[str, float]:
    """Metric(raw-trained) minus metric(log-trained).

    Positive RMSE/MAE deltas and negative R^2/sign-accuracy deltas mean the
    model trained on raw flow did worse.
    """
    if spec.kind in BASELINES:
        raise ValidationError("raw-vs-log comparison applies to trainable models only")
    raw = run_backtest(ForecasterSpec(spec.kind, spec.hyperparameters, spec.seed, "RAW", spec.grid), data, window, **kw)
    logm = run_backtest(ForecasterSpec(spec.kind, spec.hyperparameters, spec.seed, "LOG", spec.grid), data, window, **kw)
    return metric_deltas(raw.metrics, logm.metrics)


def metric_deltas(raw: MetricSet, logm: MetricSet) -> dict[str, float]:
    return {
        "rmse": raw.rmse - logm.rmse,
        "mae": raw.mae - logm.mae,
        "r2": raw.r2 - logm.r2,
        "sign_accuracy": raw.sign_accuracy - logm.sign_accuracy,
    }
