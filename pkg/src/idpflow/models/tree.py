"""Regression trees (CART, squared error) compiled with numba.

A tree is stored as flat node arrays. Node 0 is the root, ``feature == -1``
marks a leaf, and a row goes left when ``x[feature] <= threshold``.

Split search is exhaustive over the candidate columns of a node. Ties go to
the lowest column index, then the lowest threshold, which makes the tree a
pure function of (rows, targets, candidate columns). Two gains count as tied
when they differ by at most 1e-10 times the node's sum of squares.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict(self.feature, self.threshold, self.left, self.right, self.value, np.ascontiguousarray(X, dtype=np.float64))

    def splits(self, node: int = 0):
        """Preorder list of (depth, feature, threshold) for internal nodes."""
        out = []
        stack = [node]
        while stack:
            k = stack.pop()
            if self.feature[k] != LEAF:
                out.append((int(self.depth[k]), int(self.feature[k]), float(self.threshold[k])))
                stack.append(int(self.right[k]))
                stack.append(int(self.left[k]))
        return out


@nb.njit(cache=True)
def _best_split(X, y, seg, cand, min_node):
    n = seg.shape[0]
    mean = 0.0
    for i in range(n):
        mean += y[seg[i]]
    mean /= n
    sst = 0.0
    for i in range(n):
        d = y[seg[i]] - mean
        sst += d * d
    # identical partitions reached through different columns accumulate
    # rounding differently; gains this close are treated as ties
    tie = 1e-10 * sst
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    xs = np.empty(n)
    ys = np.empty(n)
    for c in range(cand.shape[0]):
        f = cand[c]
        for i in range(n):
            xs[i] = X[seg[i], f]
        order = np.argsort(xs, kind="mergesort")
        for i in range(n):
            ys[i] = y[seg[order[i]]] - mean
        total = 0.0
        for i in range(n):
            total += ys[i]
        s_left = 0.0
        for i in range(n - 1):
            s_left += ys[i]
            n_left = i + 1
            n_right = n - n_left
            if n_left < min_node:
                continue
            if n_right < min_node:
                break
            a = xs[order[i]]
            b = xs[order[i + 1]]
            if not a < b:
                continue
            s_right = total - s_left
            # reduction in SSE relative to the parent, with centered targets
            gain = s_left * s_left / n_left + s_right * s_right / n_right
            if best_f < 0 or gain > best_gain + tie:
                best_gain = gain
                best_f = f
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                best_thr = thr
    return best_f, best_thr, best_gain


@nb.njit(cache=True)
def _build(X, y, sample_idx, allowed, mtry, min_node, max_depth, rand):
    n = sample_idx.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)
    nsamp = np.zeros(cap, dtype=np.int64)

    idx = sample_idx.copy()
    buf = np.empty(n, dtype=np.int64)
    # stack of (node, start, stop)
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    top = 1
    count = 1
    n_allowed = allowed.shape[0]
    pool = np.empty(n_allowed, dtype=np.int64)
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        seg = idx[lo:hi]
        m = hi - lo
        s = 0.0
        ymin = y[seg[0]]
        ymax = ymin
        for i in range(m):
            v = y[seg[i]]
            s += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = s / m
        nsamp[node] = m
        if m < 2 * min_node or ymax == ymin or (max_depth >= 0 and depth[node] >= max_depth):
            continue
        if mtry < n_allowed:
            for k in range(n_allowed):
                pool[k] = allowed[k]
            for k in range(mtry):
                j = k + int(rand[node, k] * (n_allowed - k))
                if j >= n_allowed:
                    j = n_allowed - 1
                tmp = pool[k]
                pool[k] = pool[j]
                pool[j] = tmp
            cand = np.sort(pool[:mtry])
        else:
            cand = allowed
        f, thr, gain = _best_split(X, y, seg, cand, min_node)
        if f < 0:
            continue
        # stable partition
        nl = 0
        for i in range(m):
            if X[seg[i], f] <= thr:
                buf[nl] = seg[i]
                nl += 1
        nr = 0
        for i in range(m):
            if not X[seg[i], f] <= thr:
                buf[nl + nr] = seg[i]
                nr += 1
        for i in range(m):
            idx[lo + i] = buf[i]
        feature[node] = f
        threshold[node] = thr
        lc = count
        rc = count + 1
        count += 2
        left[node] = lc
        right[node] = rc
        depth[lc] = depth[node] + 1
        depth[rc] = depth[node] + 1
        # push right first so the left subtree is expanded first
        st_node[top] = rc
        st_lo[top] = lo + nl
        st_hi[top] = hi
        top += 1
        st_node[top] = lc
        st_lo[top] = lo
        st_hi[top] = lo + nl
        top += 1
    return (feature[:count], threshold[:count], left[:count], right[:count],
            value[:count], depth[:count], nsamp[:count])


@nb.njit(cache=True)
def _predict(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        k = 0
        while feature[k] != -1:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    sample_idx: np.ndarray | None = None,
    allowed: np.ndarray | None = None,
    mtry: int | None = None,
    min_node: int = 1,
    max_depth: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow one CART tree.

    ``sample_idx`` may repeat rows (bootstrap). ``allowed`` restricts the
    columns the tree may use; ``mtry`` of them are drawn at every node.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    if sample_idx is None:
        sample_idx = np.arange(n, dtype=np.int64)
    if allowed is None:
        allowed = np.arange(p, dtype=np.int64)
    allowed = np.ascontiguousarray(np.sort(allowed), dtype=np.int64)
    mtry = len(allowed) if mtry is None else int(mtry)
    if mtry < len(allowed):
        if rng is None:
            raise ValueError("column sampling needs an rng")
        rand = rng.random((2 * len(sample_idx) + 1, mtry))
    else:
        rand = np.zeros((1, 1))
    arrays = _build(
        X, y, np.ascontiguousarray(sample_idx, dtype=np.int64), allowed, mtry, int(min_node),
        -1 if max_depth is None else int(max_depth), rand,
    )
    return Tree(*(a.copy() for a in arrays))
