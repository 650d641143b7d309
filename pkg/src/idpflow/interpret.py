"""Minimal-depth importance, minimal-depth interactions and interval coverage.

Depth is counted from the root (depth 0). When a variable never splits in a
tree (or never below a reference split, for interactions) that tree
contributes a penalty of ``D_t + 1``, with ``D_t`` the tree's maximum depth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import NoIntervals
from .models.base import ForecastBatch, forest_of
from .models.tree import LEAF, Tree

PENALTY_NOTE = "absent variables take depth D_t + 1, D_t = maximum depth of the tree"


@dataclass
class MinimalDepthReport:
    table: pd.DataFrame  # variable, mean_minimal_depth, occurrences, absent
    interactions: pd.DataFrame | None = None  # reference, variable, conditional_depth, occurrences, absent

    def ranked(self) -> list[str]:
        return list(self.table["variable"])


def _tree_min_depths(tree: Tree, n_features: int) -> np.ndarray:
    out = np.full(n_features, np.inf)
    internal = tree.feature != LEAF
    for f, d in zip(tree.feature[internal], tree.depth[internal]):
        if d < out[f]:
            out[f] = d
    return out


def _names(forest, names):
    p = forest.n_features_
    return list(names) if names is not None else [f"x{j}" for j in range(p)]


def minimal_depth(model, names: list[str] | None = None) -> MinimalDepthReport:
    """Mean minimal depth per variable over the forest's trees, ranked ascending."""
    forest = forest_of(model)
    names = _names(forest, names or getattr(model, "_feature_names", None))
    p = len(names)
    total = np.zeros(p)
    occ = np.zeros(p, dtype=int)
    for tree in forest.trees:
        md = _tree_min_depths(tree, p)
        used = np.isfinite(md)
        occ += used
        total += np.where(used, md, tree.max_depth + 1)
    table = pd.DataFrame(
        {
            "variable": names,
            "mean_minimal_depth": total / len(forest.trees),
            "occurrences": occ,
            "absent": occ == 0,
        }
    )
    table = table.sort_values(["mean_minimal_depth", "variable"], kind="mergesort").reset_index(drop=True)
    return MinimalDepthReport(table)


def _maximal_subtree_roots(tree: Tree, ref: int) -> list[int]:
    roots = []
    stack = [0]
    while stack:
        k = stack.pop()
        f = tree.feature[k]
        if f == LEAF:
            continue
        if f == ref:
            roots.append(k)
            continue
        stack.extend((int(tree.right[k]), int(tree.left[k])))
    return roots


def _depth_below(tree: Tree, root: int, var: int) -> float:
    best = np.inf
    base = tree.depth[root]
    stack = [int(tree.left[root]), int(tree.right[root])]
    while stack:
        k = stack.pop()
        f = tree.feature[k]
        if f == LEAF:
            continue
        if f == var:
            best = min(best, tree.depth[k] - base)
            continue
        stack.extend((int(tree.left[k]), int(tree.right[k])))
    return best


def interaction_depth(model, reference_vars: list[str], names: list[str] | None = None) -> pd.DataFrame:
    """Conditional minimal depth of each variable inside maximal reference-rooted subtrees.

    For reference r, a maximal subtree is one rooted at an r-split with no
    r-split above it. The depth of v is measured from that root (a split
    directly below the root has depth 1) and minimised over the tree's
    maximal subtrees.
    """
    forest = forest_of(model)
    names = _names(forest, names or getattr(model, "_feature_names", None))
    rows = []
    for ref_name in reference_vars:
        ref = names.index(ref_name)
        total = np.zeros(len(names))
        occ = np.zeros(len(names), dtype=int)
        for tree in forest.trees:
            roots = _maximal_subtree_roots(tree, ref)
            for v in range(len(names)):
                d = min((_depth_below(tree, r, v) for r in roots), default=np.inf)
                if np.isfinite(d):
                    occ[v] += 1
                    total[v] += d
                else:
                    total[v] += tree.max_depth + 1
        for v, name in enumerate(names):
            rows.append(
                {
                    "reference": ref_name,
                    "variable": name,
                    "conditional_depth": total[v] / len(forest.trees),
                    "occurrences": int(occ[v]),
                    "absent": occ[v] == 0,
                }
            )
    return pd.DataFrame(rows)


def interval_coverage(batches: list[ForecastBatch], obs=None) -> float:
    """Fraction of rows with lo <= observed <= hi."""
    if not batches or any(not b.has_intervals for b in batches):
        raise NoIntervals("forecast batches carry no prediction intervals")
    lo = np.concatenate([b.lo for b in batches])
    hi = np.concatenate([b.hi for b in batches])
    y = np.concatenate([b.observed for b in batches]) if obs is None else np.asarray(obs, dtype=float)
    return float(np.mean((lo <= y) & (y <= hi)))
