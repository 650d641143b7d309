from __future__ import annotations

import warnings

import numpy as np
import pytest

from idpflow.errors import ModelError, NonConvergence, SingularDesign
from idpflow.models import LinearMixedModel, MixedEffectsForest, RandomForest, VarianceComponents, blup
from idpflow.models.lmm import ConvergenceWarning, RandomEffects
from idpflow.models.merf import oob_predict


def nested(seed=0, n_origins=6, pairs=4, months=12, sd_o=1.0, sd_p=0.8, sd_s=0.3, sigma=0.4):
    rng = np.random.default_rng(seed)
    o = np.repeat(np.arange(n_origins), pairs * months)
    p = np.repeat(np.arange(n_origins * pairs), months)
    n = len(o)
    X = rng.normal(size=(n, 3))
    X[:, 2] = rng.gamma(2.0, 1.0, n)
    beta = np.array([3.0, 1.0, -0.5, 0.7])
    y = (beta[0] + X @ beta[1:] + rng.normal(0, sd_o, n_origins)[o] + rng.normal(0, sd_p, n_origins * pairs)[p]
         + rng.normal(0, sd_s, n_origins * pairs)[p] * X[:, 2] + rng.normal(0, sigma, n))
    origin = np.array([f"O{k}" for k in o])
    pair = np.char.add(np.char.add(origin, "|"), p.astype(str))
    return X, y, origin, pair


def dense_loglik(resid, origin, pair, slope, theta):
    """Marginal normal log-likelihood with the full covariance built explicitly."""
    origins = sorted(set(origin))
    pairs = sorted(set(pair))
    n = len(resid)
    Z = np.zeros((n, len(origins) + 2 * len(pairs)))
    for i in range(n):
        Z[i, origins.index(origin[i])] = 1.0
        k = len(origins) + 2 * pairs.index(pair[i])
        Z[i, k] = 1.0
        Z[i, k + 1] = slope[i]
    G = np.zeros((Z.shape[1], Z.shape[1]))
    G[: len(origins), : len(origins)] = theta.origin_var * np.eye(len(origins))
    for j in range(len(pairs)):
        k = len(origins) + 2 * j
        G[k:k + 2, k:k + 2] = theta.pair_cov
    V = Z @ G @ Z.T + theta.sigma2 * np.eye(n)
    sign, logdet = np.linalg.slogdet(V)
    return -0.5 * (n * np.log(2 * np.pi) + logdet + resid @ np.linalg.solve(V, resid))


def test_estep_loglik_matches_dense_formula():
    X, y, origin, pair = nested(1, n_origins=3, pairs=3, months=5)
    slope = (X[:, 2] - X[:, 2].mean()) / X[:, 2].std()
    re = RandomEffects(origin, pair, slope)
    theta = VarianceComponents(0.7, np.array([[0.5, 0.1], [0.1, 0.2]]), 0.3)
    resid = y - y.mean()
    _, _, ll = re.estep(resid, theta)
    assert ll == pytest.approx(dense_loglik(resid, origin, pair, slope, theta), rel=1e-10)


def test_blup_matches_textbook_form():
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(15, 3))
    A = rng.normal(size=(3, 3))
    G = A @ A.T + 0.1 * np.eye(3)
    r = rng.normal(size=15)
    u, C = blup(Z, r, G, 0.5)
    V = Z @ G @ Z.T + 0.5 * np.eye(15)
    assert np.allclose(u, G @ Z.T @ np.linalg.solve(V, r))
    assert np.allclose(C, G - G @ Z.T @ np.linalg.solve(V, Z @ G))


def test_blup_with_singular_g():
    Z = np.ones((4, 2))
    u, C = blup(Z, np.arange(4.0), np.zeros((2, 2)), 1.0)
    assert np.all(u == 0) and np.all(C == 0)


def test_lmm_fit_properties():
    X, y, origin, pair = nested(3)
    m = LinearMixedModel().fit(X, y, origin, pair, slope_col=2)
    trace = np.asarray(m.ll_trace_)
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))
    assert m.theta_.origin_var >= 0 and m.theta_.sigma2 > 0
    assert np.all(np.linalg.eigvalsh(m.theta_.pair_cov) >= -1e-12)
    assert len(m.origin_fx_) == 6 and len(m.pair_fx_) == 24
    assert np.allclose(m.coef_original()[1:], [1.0, -0.5, 0.7], atol=0.1)


def test_lmm_unseen_groups_use_fixed_part_only():
    X, y, origin, pair = nested(4)
    m = LinearMixedModel().fit(X, y, origin, pair, slope_col=2)
    new_o = np.array(["NEW"] * 3)
    new_p = np.array(["NEW|x"] * 3)
    assert np.allclose(m.predict(X[:3], new_o, new_p), m.predict_fixed(X[:3]))
    seen = m.predict(X[:3], origin[:3], pair[:3])
    assert not np.allclose(seen, m.predict_fixed(X[:3]))


def test_zero_variance_reduces_to_ols():
    X, y, origin, pair = nested(5)
    m = LinearMixedModel(zero_variance=True).fit(X, y, origin, pair, slope_col=2)
    D = np.column_stack([np.ones(len(y)), X])
    ols = np.linalg.lstsq(D, y, rcond=None)[0]
    assert np.allclose(m.coef_original(), ols)
    assert np.allclose(m.predict(X, origin, pair), D @ ols)


def test_constant_columns_are_dropped():
    X, y, origin, pair = nested(6)
    Xc = np.column_stack([X, np.full(len(y), 5.0)])
    m = LinearMixedModel().fit(Xc, y, origin, pair, slope_col=2)
    assert m.coef_original()[-1] == 0.0


def test_singular_design():
    X, y, origin, pair = nested(7)
    Xs = np.column_stack([X, X[:, 0] * 2 + 1])
    with pytest.raises(SingularDesign):
        LinearMixedModel().fit(Xs, y, origin, pair)


def test_needs_two_origins():
    X, y, origin, pair = nested(8)
    with pytest.raises(ModelError):
        LinearMixedModel().fit(X, y, np.array(["O"] * len(y)), pair)


def test_iteration_cap_warns_or_raises():
    X, y, origin, pair = nested(9)
    with pytest.warns(ConvergenceWarning):
        LinearMixedModel(max_iter=2).fit(X, y, origin, pair, slope_col=2)
    with pytest.raises(NonConvergence) as e:
        LinearMixedModel(max_iter=2, strict=True).fit(X, y, origin, pair, slope_col=2)
    assert e.value.iterations == 2


def test_reduced_random_structure():
    X, y, origin, pair = nested(10)
    m = LinearMixedModel(pair_slope=False).fit(X, y, origin, pair, slope_col=2)
    assert m.theta_.pair_cov.shape == (1, 1)
    m = LinearMixedModel(pair_intercept=False, pair_slope=False).fit(X, y, origin, pair)
    assert m.theta_.pair_cov.shape == (0, 0)


# --- MERF ---------------------------------------------------------------------------


def test_oob_without_bootstrap_falls_back_to_full_mean():
    X, y, origin, pair = nested(11)
    rf = RandomForest(n_trees=5, bootstrap=False, mtry=3, seed=0).fit(X, y)
    assert np.array_equal(oob_predict(rf, X, len(y)), rf.predict(X))


def test_oob_uses_only_out_of_bag_trees():
    X, y, origin, pair = nested(12)
    rf = RandomForest(n_trees=8, seed=3).fit(X, y)
    oob = oob_predict(rf, X, len(y))
    per_tree = rf.predict_trees(X)
    i = 0
    out = [k for k in range(8) if i not in np.random.default_rng(3 ^ k).integers(0, len(y), len(y))]
    want = per_tree[out, i].mean() if out else per_tree[:, i].mean()
    assert oob[i] == pytest.approx(want)


def test_merf_zero_variance_is_plain_forest():
    X, y, origin, pair = nested(13)
    params = {"n_trees": 10, "seed": 2}
    m = MixedEffectsForest(params, zero_variance=True).fit(X, y, origin, pair, 2)
    assert np.array_equal(m.predict(X, origin, pair), RandomForest(**params).fit(X, y).predict(X))


def test_merf_gll_trace_non_decreasing_and_interval_shifted():
    X, y, origin, pair = nested(14)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        m = MixedEffectsForest({"n_trees": 20, "seed": 0}, max_iter=8).fit(X, y, origin, pair, 2)
    tr = np.asarray(m.gll_trace_)
    assert np.all(np.diff(tr) >= -1e-9 * np.abs(tr[:-1]))
    point, lo, hi = m.interval(X[:5], origin[:5], pair[:5])
    assert np.allclose(point, m.predict(X[:5], origin[:5], pair[:5]))
    assert np.all(lo <= hi)
    assert m.theta_.sigma2 > 0 and m.theta_.origin_var >= 0
