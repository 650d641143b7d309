"""Stagewise gradient boosting of CART trees on squared error."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidHyperparameter
from .tree import Tree, fit_tree


class GradientBoosting:
    """F_0 = mean(y); each round adds ``shrinkage`` times a tree fit to residuals.

    ``subsample`` draws rows without replacement per round and
    ``colsample_bytree`` draws the columns a round's tree may use.
    ``depth=None`` grows trees until leaves are pure or reach ``min_node``.
    """

    def __init__(self, rounds=200, depth=4, shrinkage=0.1, colsample_bytree=1.0, subsample=1.0, min_node=1, seed=0):
        self.rounds = rounds
        self.depth = depth
        self.shrinkage = shrinkage
        self.colsample_bytree = colsample_bytree
        self.subsample = subsample
        self.min_node = min_node
        self.seed = seed

    def _check(self):
        if int(self.rounds) < 0:
            raise InvalidHyperparameter(f"rounds must be >= 0, got {self.rounds}")
        if self.depth is not None and int(self.depth) < 1:
            raise InvalidHyperparameter(f"depth must be >= 1, got {self.depth}")
        for name in ("shrinkage", "colsample_bytree", "subsample"):
            v = float(getattr(self, name))
            if not 0 < v <= 1:
                raise InvalidHyperparameter(f"{name} must lie in (0, 1], got {v}")

    def fit(self, X, y):
        self._check()
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, p = X.shape
        rng = np.random.default_rng(int(self.seed))
        self.base_ = float(np.mean(y))
        self.trees: list[Tree] = []
        F = np.full(n, self.base_)
        n_rows = max(1, int(round(self.subsample * n)))
        n_cols = max(1, int(round(self.colsample_bytree * p)))
        for _ in range(int(self.rounds)):
            cols = np.sort(rng.choice(p, n_cols, replace=False)) if n_cols < p else np.arange(p)
            rows = np.sort(rng.choice(n, n_rows, replace=False)) if n_rows < n else np.arange(n)
            tree = fit_tree(X, y - F, rows, allowed=cols, min_node=self.min_node, max_depth=self.depth)
            F += self.shrinkage * tree.predict(X)
            self.trees.append(tree)
        return self

    def staged_predict(self, X, stages=None):
        """Yield (rounds_used, prediction) after each requested round count."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        stages = set(range(len(self.trees) + 1)) if stages is None else set(stages)
        F = np.full(X.shape[0], self.base_)
        if 0 in stages:
            yield 0, F.copy()
        for m, tree in enumerate(self.trees, start=1):
            F += self.shrinkage * tree.predict(X)
            if m in stages:
                yield m, F.copy()

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        F = np.full(X.shape[0], self.base_)
        for tree in self.trees:
            F += self.shrinkage * tree.predict(X)
        return F
