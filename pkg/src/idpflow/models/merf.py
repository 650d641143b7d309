"""Mixed-effects random forest: y = f(X) + Z v + e with f a random forest.

Alternates between fitting the forest on ``y - Z v`` and updating the BLUPs
and variance components against the forest's out-of-bag residuals with the
same E/M formulas as the linear mixed model.
"""
from __future__ import annotations

import warnings

import numpy as np

from .forest import RandomForest, tree_mean, tree_quantiles
from .lmm import ConvergenceWarning, RandomEffects, Standardizer, VarianceComponents


def oob_predict(forest: RandomForest, X, n_rows: int) -> np.ndarray:
    """Out-of-bag forest predictions; rows never left out fall back to in-bag."""
    per_tree = forest.predict_trees(X)
    acc = np.zeros(n_rows)
    cnt = np.zeros(n_rows)
    for k, row in enumerate(per_tree):
        if forest.bootstrap:
            rng = np.random.default_rng(int(forest.seed) ^ k)
            inbag = np.zeros(n_rows, dtype=bool)
            inbag[rng.integers(0, n_rows, n_rows)] = True
            out = ~inbag
        else:
            out = np.zeros(n_rows, dtype=bool)
        acc[out] += row[out]
        cnt[out] += 1
    full = tree_mean(per_tree)
    return np.where(cnt > 0, acc / np.maximum(cnt, 1), full)


class MixedEffectsForest:
    def __init__(
        self,
        forest_params: dict | None = None,
        origin_intercept=True,
        pair_intercept=True,
        pair_slope=True,
        max_iter=50,
        tol=1e-6,
        zero_variance=False,
    ):
        self.forest_params = dict(forest_params or {})
        self.origin_intercept = origin_intercept
        self.pair_intercept = pair_intercept
        self.pair_slope = pair_slope
        self.max_iter = max_iter
        self.tol = tol
        self.zero_variance = zero_variance

    def fit(self, X, y, origin, pair, slope_col: int | None = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(y)
        self.slope_col = slope_col
        self.scaler_ = Standardizer().fit(X)
        slope = self.scaler_.column(X, slope_col) if slope_col is not None else np.zeros(n)
        if self.zero_variance:
            self.forest_ = RandomForest(**self.forest_params).fit(X, y)
            self.re_ = None
            self.origin_fx_, self.pair_fx_ = {}, {}
            self.gll_trace_ = []
            self.converged_ = True
            return self

        re = RandomEffects(origin, pair, slope, self.origin_intercept, self.pair_intercept,
                           self.pair_slope and slope_col is not None)
        self.re_ = re
        theta = re.initial(float(np.var(y)) or 1.0)
        floor = 1e-10 * max(float(np.var(y)), 1e-300)
        zv = np.zeros(n)
        trace = []
        best = None
        converged = False
        for it in range(int(self.max_iter)):
            forest = RandomForest(**self.forest_params).fit(X, y - zv)
            resid = y - oob_predict(forest, X, n)
            us, Cs, gll = re.estep(resid, theta)
            if trace and gll < trace[-1] - 1e-9 * abs(trace[-1]):
                # the forest refit lowered the likelihood: keep the previous iterate
                converged = True
                break
            delta = abs(gll - trace[-1]) / max(abs(trace[-1]), 1e-300) if trace else np.inf
            trace.append(gll)
            best = (forest, us, theta.copy())
            if delta < self.tol:
                converged = True
                break
            theta = re.mstep(resid, us, Cs, floor)
            zv = re.fitted(us)
        self.forest_, us, self.theta_ = best
        self.gll_trace_ = trace
        self.converged_ = converged
        self.n_iter_ = len(trace)
        self.origin_fx_, self.pair_fx_ = re.effect_tables(us)
        if not converged:
            warnings.warn(f"MERF stopped after {len(trace)} iterations", ConvergenceWarning)
        return self

    def _effects(self, X, origin, pair):
        if self.re_ is None:
            return np.zeros(len(X))
        slope = self.scaler_.column(X, self.slope_col) if self.slope_col is not None else np.zeros(len(X))
        return self.re_.predict_effects(self.origin_fx_, self.pair_fx_, origin, pair, slope)

    def predict(self, X, origin, pair) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.forest_.predict(X) + self._effects(X, origin, pair)

    def interval(self, X, origin, pair, level=0.95):
        X = np.asarray(X, dtype=float)
        per_tree = self.forest_.predict_trees(X)
        shift = self._effects(X, origin, pair)
        lo, hi = tree_quantiles(per_tree, level)
        return tree_mean(per_tree) + shift, lo + shift, hi + shift
