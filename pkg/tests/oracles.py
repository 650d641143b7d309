"""Independent reference implementations used only by the tests.

They are written for clarity, not speed, and avoid the package's own helpers
so that agreement is meaningful.
"""
from __future__ import annotations

import math

import numpy as np


def metrics_single_pass(pred, obs, ref):
    """rmse, mae, r2 and sign accuracy in one loop (Welford for the variance)."""
    n = 0
    sq = ab = 0.0
    mean = m2 = 0.0
    hits = scored = 0
    for p, o, r in zip(pred, obs, ref):
        n += 1
        e = p - o
        sq += e * e
        ab += abs(e)
        delta = o - mean
        mean += delta / n
        m2 += delta * (o - mean)
        if not math.isnan(r):
            scored += 1
            hits += (p > r) == (o > r)
    rmse = math.sqrt(sq / n)
    mae = ab / n
    r2 = float("nan") if m2 == 0 else 1.0 - sq / m2
    acc = float("nan") if scored == 0 else hits / scored
    return rmse, mae, r2, acc


def law_of_cosines_km(a, b, radius=6371.0):
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dl = math.radians(b[1] - a[1])
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return radius * math.acos(max(-1.0, min(1.0, c)))


def cart_oracle(X, y, min_node=1, max_depth=None):
    """Exhaustive-search regression tree as nested dicts.

    At each node every column and every midpoint between consecutive distinct
    values is tried, and the split with the smallest summed child SSE wins
    (lowest column, then lowest threshold, on ties within 1e-10 of the node's
    SSE). Nodes stop on a pure
    target, when no split leaves ``min_node`` rows on both sides, or at
    ``max_depth``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)

    def mean(rows):
        s = 0.0
        for i in rows:
            s += y[i]
        return s / len(rows)

    def sse(rows):
        m = sum(y[i] for i in rows) / len(rows)
        return sum((y[i] - m) ** 2 for i in rows)

    def grow(rows, depth):
        node = {"value": mean(rows), "depth": depth, "n": len(rows)}
        if len({y[i] for i in rows}) == 1 or (max_depth is not None and depth >= max_depth):
            return node
        if len(rows) < 2 * min_node:
            return node
        best = None
        tie = 1e-10 * sse(rows)
        for f in range(X.shape[1]):
            vals = sorted({X[i, f] for i in rows})
            for a, b in zip(vals, vals[1:]):
                thr = 0.5 * (a + b)
                left = [i for i in rows if X[i, f] <= thr]
                right = [i for i in rows if X[i, f] > thr]
                if len(left) < min_node or len(right) < min_node:
                    continue
                cost = sse(left) + sse(right)
                if best is None or cost < best[0] - tie:
                    best = (cost, f, thr, left, right)
        if best is None:
            return node
        _, f, thr, left, right = best
        node.update(feature=f, threshold=thr, left=grow(left, depth + 1), right=grow(right, depth + 1))
        return node

    return grow(list(range(len(y))), 0)


def oracle_splits(node):
    """Preorder (depth, feature, threshold) list, matching Tree.splits()."""
    if "feature" not in node:
        return []
    return [(node["depth"], node["feature"], node["threshold"])] + oracle_splits(node["left"]) + oracle_splits(node["right"])


def oracle_predict(node, X):
    out = []
    for x in np.asarray(X, dtype=float):
        k = node
        while "feature" in k:
            k = k["left"] if x[k["feature"]] <= k["threshold"] else k["right"]
        out.append(k["value"])
    return np.array(out)


def central_differences(f, params, eps=1e-6):
    """Numerical gradient of scalar f(params) for a list of arrays."""
    grads = []
    for prm in params:
        g = np.zeros_like(prm)
        it = np.nditer(prm, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = prm[idx]
            prm[idx] = old + eps
            up = f(params)
            prm[idx] = old - eps
            down = f(params)
            prm[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads
