"""Bagged CART forest with tree-quantile prediction intervals."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidHyperparameter
from .tree import Tree, fit_tree


def default_mtry(p: int) -> int:
    return max(1, p // 3)


class RandomForest:
    """Mean of ``n_trees`` CART trees grown on bootstrap samples.

    Tree ``k`` draws its bootstrap sample and column subsets from a generator
    seeded with ``seed ^ k``, so any single tree can be regrown in isolation.
    """

    def __init__(self, n_trees=500, mtry=None, min_node=5, bootstrap=True, max_depth=None, seed=0):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_node = min_node
        self.bootstrap = bootstrap
        self.max_depth = max_depth
        self.seed = seed
        self.trees: list[Tree] = []

    def _check(self, p):
        if int(self.n_trees) < 1:
            raise InvalidHyperparameter(f"n_trees must be >= 1, got {self.n_trees}")
        if int(self.min_node) < 1:
            raise InvalidHyperparameter(f"min_node must be >= 1, got {self.min_node}")
        mtry = default_mtry(p) if self.mtry is None else int(self.mtry)
        if not 1 <= mtry <= p:
            raise InvalidHyperparameter(f"mtry must lie in [1, {p}], got {self.mtry}")
        return mtry

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, p = X.shape
        mtry = self._check(p)
        if len(np.unique(y)) < 2:
            raise InvalidHyperparameter("forest needs at least two distinct target values")
        self.n_features_ = p
        self.mtry_ = mtry
        self.trees = []
        for k in range(int(self.n_trees)):
            rng = np.random.default_rng(int(self.seed) ^ k)
            idx = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees.append(
                fit_tree(X, y, idx, mtry=mtry, min_node=self.min_node, max_depth=self.max_depth, rng=rng)
            )
        return self

    def predict_trees(self, X) -> np.ndarray:
        """Per-tree predictions, shape (n_trees, n_rows)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return tree_mean(self.predict_trees(X))

    def interval(self, X, level=0.95):
        """Point prediction and the empirical (1-level)/2, (1+level)/2 tree percentiles."""
        per_tree = self.predict_trees(X)
        return tree_mean(per_tree), *tree_quantiles(per_tree, level)


def tree_mean(per_tree: np.ndarray) -> np.ndarray:
    # fixed-order accumulation over trees
    acc = np.zeros(per_tree.shape[1])
    for row in per_tree:
        acc += row
    return acc / per_tree.shape[0]


def tree_quantiles(per_tree: np.ndarray, level: float = 0.95):
    """Percentiles with linear interpolation between order statistics."""
    a = 100 * (1 - level) / 2
    lo, hi = np.percentile(per_tree, [a, 100 - a], axis=0, method="linear")
    return lo, hi
