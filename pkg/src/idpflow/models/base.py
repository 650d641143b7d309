"""One fit/predict contract over every forecaster kind."""
from __future__ import annotations

import itertools
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidHyperparameter, ValidationError
from ..featurize import FeatureMatrix, inv_transform
from .baselines import HistoricalMean, LastObservation
from .boosting import GradientBoosting
from .forest import RandomForest, default_mtry
from .lmm import LinearMixedModel
from .merf import MixedEffectsForest
from .mlp import MLP

KINDS = ("HM", "LOCF", "LMM", "RF", "MERF", "GBT", "MLP")
BASELINES = ("HM", "LOCF")
SCALES = ("LOG", "RAW")
FORMAT_VERSION = 1

_RE_KEYS = {"origin_intercept", "pair_intercept", "pair_slope", "max_iter", "tol", "zero_variance"}
_RF_KEYS = {"n_trees", "mtry", "min_node", "bootstrap", "max_depth"}
ALLOWED = {
    "HM": set(),
    "LOCF": set(),
    "LMM": _RE_KEYS | {"strict"},
    "RF": _RF_KEYS,
    "MERF": _RF_KEYS | _RE_KEYS,
    "GBT": {"rounds", "depth", "shrinkage", "colsample_bytree", "subsample", "min_node"},
    "MLP": {"nodes", "epochs", "step", "batch_size"},
}


@dataclass
class ForecasterSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    target_scale: str = "LOG"
    grid: dict | None = None

    def __post_init__(self):
        self.kind = self.kind.upper()
        self.target_scale = self.target_scale.upper()
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if self.target_scale not in SCALES:
            raise ValidationError(f"unknown target scale {self.target_scale!r}")
        for source in (self.hyperparameters, self.grid or {}):
            bad = set(source) - ALLOWED[self.kind]
            if bad:
                raise InvalidHyperparameter(f"{self.kind} does not accept {sorted(bad)}")
        for k, v in (self.grid or {}).items():
            if not isinstance(v, (list, tuple)) or not v:
                raise InvalidHyperparameter(f"grid entry {k!r} must be a non-empty list")

    def with_params(self, **params) -> "ForecasterSpec":
        return ForecasterSpec(self.kind, {**self.hyperparameters, **params}, self.seed, self.target_scale, self.grid)


@dataclass
class ForecastBatch:
    """Predictions for a set of rows; intervals only for forest kinds."""

    kind: str
    scale: str
    month: np.ndarray
    origin: np.ndarray
    destination: np.ndarray
    observed: np.ndarray
    point: np.ndarray
    point_log: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.point)

    @property
    def has_intervals(self) -> bool:
        return self.lo is not None


def _to_flow(values, scale):
    values = np.asarray(values, dtype=float)
    return inv_transform(values) if scale == "LOG" else np.maximum(values, 0.0)


class Forecaster:
    def __init__(self, spec: ForecasterSpec):
        self.spec = spec
        self.manifest: dict = {}

    @property
    def kind(self) -> str:
        return self.spec.kind

    def _target(self, data: FeatureMatrix):
        return data.y_log if self.spec.target_scale == "LOG" else data.y

    def fit(self, data: FeatureMatrix) -> "Forecaster":
        hp = dict(self.spec.hyperparameters)
        kind, seed = self.kind, self.spec.seed
        log_scale = self.spec.target_scale == "LOG"
        if kind in BASELINES:
            cls = HistoricalMean if kind == "HM" else LastObservation
            self.model = cls(log_scale=log_scale).fit(data.history)
        else:
            if len(data) == 0:
                raise ValidationError("no training rows")
            y = self._target(data)
            ar = data.col("ar") if "ar" in data.names else None
            if kind == "RF":
                self.model = RandomForest(seed=seed, **hp).fit(data.X, y)
            elif kind == "GBT":
                self.model = GradientBoosting(seed=seed, **hp).fit(data.X, y)
            elif kind == "MLP":
                self.model = MLP(seed=seed, **hp).fit(data.X, y)
            elif kind == "LMM":
                self.model = LinearMixedModel(**hp).fit(data.X, y, data.origin, data.pair, ar)
            elif kind == "MERF":
                forest = {k: hp.pop(k) for k in list(hp) if k in _RF_KEYS}
                self.model = MixedEffectsForest({**forest, "seed": seed}, **hp).fit(
                    data.X, y, data.origin, data.pair, ar
                )
        self._feature_names = list(data.names)
        months = data.history["month"] if kind in BASELINES else data.month
        self.manifest = {
            "kind": kind,
            "target_scale": self.spec.target_scale,
            "seed": seed,
            "hyperparameters": hp if kind != "MERF" else dict(self.spec.hyperparameters),
            "rows": int(len(data.history) if kind in BASELINES else len(data)),
            "window": [int(np.min(months)), int(np.max(months))] if len(months) else None,
        }
        return self

    def predict_raw(self, data: FeatureMatrix, level: float = 0.95):
        """Point (and interval) on the model's own target scale."""
        kind = self.kind
        if kind in BASELINES:
            return self.model.predict(data.origin, data.destination, data.month), None, None
        if kind == "RF":
            return self.model.interval(data.X, level)
        if kind == "MERF":
            return self.model.interval(data.X, data.origin, data.pair, level)
        if kind == "LMM":
            return self.model.predict(data.X, data.origin, data.pair), None, None
        return self.model.predict(data.X), None, None

    def predict(self, data: FeatureMatrix, level: float = 0.95) -> ForecastBatch:
        scale = self.spec.target_scale
        point, lo, hi = self.predict_raw(data, level)
        if lo is not None:
            lo = np.minimum(lo, point)
            hi = np.maximum(hi, point)
        flow = _to_flow(point, scale)
        batch = ForecastBatch(
            kind=self.kind, scale=scale, month=data.month, origin=data.origin, destination=data.destination,
            observed=data.y, point=flow,
            point_log=np.asarray(point, dtype=float) if scale == "LOG" else np.log1p(flow),
        )
        if lo is not None:
            batch.lo = _to_flow(lo, scale)
            batch.hi = _to_flow(hi, scale)
        return batch

    def describe(self) -> dict:
        out = dict(self.manifest)
        m = getattr(self, "model", None)
        if isinstance(m, (RandomForest, GradientBoosting)):
            out["n_trees"] = len(m.trees)
            out["mean_tree_depth"] = float(np.mean([t.max_depth for t in m.trees])) if m.trees else 0.0
        if isinstance(m, (LinearMixedModel, MixedEffectsForest)) and getattr(m, "re_", None) is not None:
            th = m.theta_
            out["variance_components"] = {
                "origin_intercept_var": th.origin_var,
                "pair_cov": np.asarray(th.pair_cov).tolist(),
                "residual_var": th.sigma2,
            }
            out["converged"] = bool(m.converged_)
        if isinstance(m, LinearMixedModel):
            out["beta_standardized"] = np.asarray(m.beta_).tolist()
        if isinstance(m, MixedEffectsForest):
            out["n_trees"] = len(m.forest_.trees)
        if isinstance(m, MLP):
            out["final_training_loss"] = m.loss_history_[-1]
        return out


def make_forecaster(spec: ForecasterSpec) -> Forecaster:
    return Forecaster(spec)


def forest_of(model: Forecaster) -> RandomForest:
    """The random forest inside an RF or MERF forecaster."""
    from ..errors import WrongModelKind

    m = getattr(model, "model", model)
    if isinstance(m, RandomForest):
        return m
    if isinstance(m, MixedEffectsForest):
        return m.forest_
    raise WrongModelKind(f"expected RF or MERF, got {getattr(model, 'kind', type(m).__name__)}")


# --- tuning ------------------------------------------------------------------------


def default_grid(kind: str, n_features: int) -> dict | None:
    if kind in ("RF", "MERF"):
        p = n_features
        return {"mtry": sorted({max(1, int(round(np.sqrt(p)))), default_mtry(p), max(1, p // 2)})}
    if kind == "GBT":
        return {
            "depth": [2, 4, 6],
            "shrinkage": [0.05, 0.1],
            "colsample_bytree": [0.8, 1.0],
            "subsample": [0.8, 1.0],
            "rounds": [50, 200, 500],
        }
    if kind == "MLP":
        return {"nodes": [8, 16, 32]}
    return None


def grid_points(grid: dict) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cv_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def tune(spec: ForecasterSpec, data: FeatureMatrix, grid: dict | None = None, k: int = 5, seed: int | None = None):
    """Grid point with the lowest mean k-fold RMSE on the training target.

    Rows are shuffled by a seeded permutation and cut into k contiguous
    folds. Ties keep the earliest grid point. MERF is tuned through its
    forest alone.
    """
    grid = grid if grid is not None else spec.grid
    if not grid:
        return {}
    seed = spec.seed if seed is None else seed
    points = grid_points(grid)
    if len(points) == 1:
        return points[0]
    kind = "RF" if spec.kind == "MERF" else spec.kind
    base = ForecasterSpec(kind, {kk: v for kk, v in spec.hyperparameters.items() if kk in ALLOWED[kind]},
                          spec.seed, spec.target_scale)
    folds = cv_folds(len(data), k, seed)
    y = data.y_log if spec.target_scale == "LOG" else data.y
    scores = np.zeros(len(points))

    if kind == "GBT" and "rounds" in grid:
        # one fit at the largest round count serves every smaller one
        rest = [kk for kk in grid if kk != "rounds"]
        groups: dict[tuple, list[int]] = {}
        for i, pt in enumerate(points):
            groups.setdefault(tuple(pt[kk] for kk in rest), []).append(i)
        for members in groups.values():
            params = {kk: points[members[0]][kk] for kk in rest}
            max_rounds = max(points[i]["rounds"] for i in members)
            for f in folds:
                train = np.setdiff1d(np.arange(len(y)), f)
                m = GradientBoosting(seed=spec.seed, **{**base.hyperparameters, **params, "rounds": max_rounds})
                m.fit(data.X[train], y[train])
                staged = dict(m.staged_predict(data.X[f], {points[i]["rounds"] for i in members}))
                for i in members:
                    scores[i] += _rmse(staged[points[i]["rounds"]], y[f]) / len(folds)
    else:
        for i, pt in enumerate(points):
            for f in folds:
                mask = np.ones(len(y), dtype=bool)
                mask[f] = False
                model = Forecaster(base.with_params(**pt)).fit(data.subset(mask))
                pred, _, _ = model.predict_raw(data.subset(~mask))
                scores[i] += _rmse(pred, y[~mask]) / len(folds)
    best = int(np.argmin(scores))  # first minimum
    return points[best]


# --- serialization ---------------------------------------------------------------------


def save_model(model: Forecaster, path: str | Path, extra: dict | None = None) -> None:
    payload = {"format_version": FORMAT_VERSION, "manifest": {**model.manifest, **(extra or {})}, "model": model}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        pickle.dump(payload, fh, protocol=4)
    tmp.replace(path)


def load_model(path: str | Path) -> Forecaster:
    with Path(path).open("rb") as fh:
        payload = pickle.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported model format {payload.get('format_version')}")
    model = payload["model"]
    model.manifest = payload["manifest"]
    return model
