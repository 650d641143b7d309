"""Three-level linear mixed-effects model fit by maximum likelihood with EM.

Levels are origin province, origin-destination pair, and month. The default
random-effects structure is a random intercept per origin plus a random
intercept and a random slope on the autoregressive covariate per pair:

    y = X beta + Z v + e,   v_origin ~ N(0, s_o^2),  v_pair ~ N(0, S_p),
    e ~ N(0, s^2 I)

Each EM cycle takes a GLS step for ``beta`` at the current variance
components, then an E-step (BLUPs and their conditional covariances) and a
closed-form M-step for ``(s_o^2, S_p, s^2)``. Both steps are ascent steps, so
the log-likelihood is non-decreasing.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ModelError, NonConvergence, SingularDesign

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2 * np.pi))


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class VarianceComponents:
    origin_var: float
    pair_cov: np.ndarray
    sigma2: float

    def copy(self) -> "VarianceComponents":
        return VarianceComponents(self.origin_var, self.pair_cov.copy(), self.sigma2)


def blup(Z: np.ndarray, r: np.ndarray, G: np.ndarray, sigma2: float):
    """Conditional mean and covariance of v given r = Z v + e.

    Uses C = (I + G Z'Z / s^2)^{-1} G, which stays valid when G is singular.
    """
    q = G.shape[0]
    M = np.eye(q) + G @ (Z.T @ Z) / sigma2
    C = np.linalg.solve(M, G)
    C = 0.5 * (C + C.T)
    u = C @ (Z.T @ r) / sigma2
    return u, C


class RandomEffects:
    """Nested random-effects design, one block per origin.

    Within an origin's block, column 0 is the origin intercept (if enabled),
    followed by ``q_pair`` columns for each of the origin's pairs.
    """

    def __init__(self, origin, pair, slope, origin_intercept=True, pair_intercept=True, pair_slope=True):
        origin = np.asarray(origin).astype(str)
        pair = np.asarray(pair).astype(str)
        slope = np.asarray(slope, dtype=float)
        self.q_origin = int(bool(origin_intercept))
        self.q_pair = int(bool(pair_intercept)) + int(bool(pair_slope))
        self.pair_intercept = bool(pair_intercept)
        self.pair_slope = bool(pair_slope)
        self.n = len(origin)
        self.blocks = []
        for o in sorted(set(origin)):
            rows = np.flatnonzero(origin == o)
            pairs = sorted(set(pair[rows]))
            q = self.q_origin + self.q_pair * len(pairs)
            Z = np.zeros((len(rows), q))
            if self.q_origin:
                Z[:, 0] = 1.0
            pos = {p: self.q_origin + self.q_pair * k for k, p in enumerate(pairs)}
            for r_i, row in enumerate(rows):
                c = pos[pair[row]]
                if self.pair_intercept:
                    Z[r_i, c] = 1.0
                    c += 1
                if self.pair_slope:
                    Z[r_i, c] = slope[row]
            self.blocks.append({"origin": o, "rows": rows, "pairs": pairs, "Z": Z, "ZtZ": Z.T @ Z})
        self.n_origins = len(self.blocks)
        self.n_pairs = sum(len(b["pairs"]) for b in self.blocks)

    def G(self, theta: VarianceComponents, block) -> np.ndarray:
        q = block["Z"].shape[1]
        G = np.zeros((q, q))
        if self.q_origin:
            G[0, 0] = theta.origin_var
        for k in range(len(block["pairs"])):
            s = self.q_origin + self.q_pair * k
            G[s:s + self.q_pair, s:s + self.q_pair] = theta.pair_cov
        return G

    def estep(self, resid: np.ndarray, theta: VarianceComponents):
        """BLUPs, conditional covariances and the marginal log-likelihood of ``resid``."""
        s2 = theta.sigma2
        us, Cs = [], []
        ll = 0.0
        for b in self.blocks:
            r = resid[b["rows"]]
            n_i = len(r)
            G = self.G(theta, b)
            q = G.shape[0]
            M = np.eye(q) + G @ b["ZtZ"] / s2
            C = np.linalg.solve(M, G)
            C = 0.5 * (C + C.T)
            Ztr = b["Z"].T @ r
            u = C @ Ztr / s2
            sign, logdet = np.linalg.slogdet(M)
            quad = (r @ r - Ztr @ u) / s2
            ll += -0.5 * (n_i * LOG_2PI + n_i * np.log(s2) + logdet + quad)
            us.append(u)
            Cs.append(C)
        return us, Cs, float(ll)

    def mstep(self, resid: np.ndarray, us, Cs, floor: float = 1e-12) -> VarianceComponents:
        origin_var = 0.0
        pair_cov = np.zeros((self.q_pair, self.q_pair))
        sse = 0.0
        for b, u, C in zip(self.blocks, us, Cs):
            if self.q_origin:
                origin_var += u[0] ** 2 + C[0, 0]
            for k in range(len(b["pairs"])):
                s = self.q_origin + self.q_pair * k
                up = u[s:s + self.q_pair]
                pair_cov += np.outer(up, up) + C[s:s + self.q_pair, s:s + self.q_pair]
            e = resid[b["rows"]] - b["Z"] @ u
            sse += e @ e + np.sum(b["ZtZ"] * C)
        origin_var = origin_var / self.n_origins if self.q_origin else 0.0
        if self.q_pair:
            pair_cov = pair_cov / self.n_pairs
        return VarianceComponents(float(origin_var), 0.5 * (pair_cov + pair_cov.T), max(sse / self.n, floor))

    def fitted(self, us) -> np.ndarray:
        out = np.zeros(self.n)
        for b, u in zip(self.blocks, us):
            out[b["rows"]] = b["Z"] @ u
        return out

    def effect_tables(self, us):
        """Origin intercepts and per-pair effect vectors keyed by label."""
        origin_fx, pair_fx = {}, {}
        for b, u in zip(self.blocks, us):
            origin_fx[b["origin"]] = float(u[0]) if self.q_origin else 0.0
            for k, p in enumerate(b["pairs"]):
                s = self.q_origin + self.q_pair * k
                pair_fx[p] = u[s:s + self.q_pair].copy()
        return origin_fx, pair_fx

    def predict_effects(self, origin_fx, pair_fx, origin, pair, slope) -> np.ndarray:
        """Z v for new rows; unseen origins or pairs contribute zero."""
        out = np.zeros(len(origin))
        for i, (o, p) in enumerate(zip(np.asarray(origin).astype(str), np.asarray(pair).astype(str))):
            v = origin_fx.get(o, 0.0)
            fx = pair_fx.get(p)
            if fx is not None:
                c = 0
                if self.pair_intercept:
                    v += fx[0]
                    c = 1
                if self.pair_slope:
                    v += fx[c] * slope[i]
            out[i] = v
        return out

    def initial(self, resid_var: float) -> VarianceComponents:
        pc = np.zeros((self.q_pair, self.q_pair))
        if self.q_pair:
            pc[np.diag_indices(self.q_pair)] = 0.25 * resid_var
            if self.pair_slope:
                pc[-1, -1] = 0.05 * resid_var
        return VarianceComponents(0.25 * resid_var if self.q_origin else 0.0, pc, 0.5 * resid_var)


class Standardizer:
    """Training-set z-scoring; constant columns are dropped."""

    def fit(self, X):
        X = np.asarray(X, dtype=float)
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0, ddof=0)
        self.keep_ = sd > 1e-12 * np.maximum(1.0, np.abs(self.mean_))
        self.sd_ = np.where(self.keep_, sd, 1.0)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        return ((X - self.mean_) / self.sd_)[:, self.keep_]

    def column(self, X, j):
        return (np.asarray(X, dtype=float)[:, j] - self.mean_[j]) / self.sd_[j]


class LinearMixedModel:
    """ML fit of the nested mixed model on standardized covariates.

    ``beta_`` is reported on the standardized scale with the intercept first;
    :meth:`coef_original` maps it back to the input units.
    """

    def __init__(
        self,
        origin_intercept=True,
        pair_intercept=True,
        pair_slope=True,
        max_iter=500,
        tol=1e-8,
        zero_variance=False,
        strict=False,
    ):
        self.origin_intercept = origin_intercept
        self.pair_intercept = pair_intercept
        self.pair_slope = pair_slope
        self.max_iter = max_iter
        self.tol = tol
        self.zero_variance = zero_variance
        self.strict = strict

    def _design(self, X):
        Xs = self.scaler_.transform(X)
        return np.column_stack([np.ones(len(Xs)), Xs])

    def fit(self, X, y, origin, pair, slope_col: int | None = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        origin = np.asarray(origin).astype(str)
        pair = np.asarray(pair).astype(str)
        if not self.zero_variance:
            n_origins = len(set(origin))
            per_origin = max(len(set(pair[origin == o])) for o in set(origin))
            if n_origins < 2 or per_origin < 2:
                raise ModelError("mixed model needs >= 2 origins and >= 2 pairs within some origin")
        self.scaler_ = Standardizer().fit(X)
        D = self._design(X)
        if np.linalg.matrix_rank(D) < D.shape[1]:
            raise SingularDesign(f"design matrix of rank {np.linalg.matrix_rank(D)} < {D.shape[1]} columns")
        self.slope_col = slope_col
        slope = self.scaler_.column(X, slope_col) if slope_col is not None else np.zeros(len(y))
        use_slope = self.pair_slope and slope_col is not None

        ols = np.linalg.lstsq(D, y, rcond=None)[0]
        if self.zero_variance:
            self.beta_ = ols
            r = y - D @ ols
            self.theta_ = VarianceComponents(0.0, np.zeros((0, 0)), float(r @ r / len(y)))
            self.re_ = None
            self.origin_fx_, self.pair_fx_ = {}, {}
            self.ll_trace_ = []
            self.converged_ = True
            return self

        re = RandomEffects(origin, pair, slope, self.origin_intercept, self.pair_intercept, use_slope)
        self.re_ = re
        r0 = y - D @ ols
        theta = re.initial(float(r0.var()) or 1.0)
        floor = 1e-10 * max(float(np.var(y)), 1e-300)
        blocks = [(b, D[b["rows"]], y[b["rows"]]) for b in re.blocks]
        trace = []
        converged = False
        delta = np.inf
        for it in range(int(self.max_iter)):
            beta = self._gls(blocks, re, theta, D.shape[1])
            resid = y - D @ beta
            us, Cs, ll = re.estep(resid, theta)
            if trace:
                delta = abs(ll - trace[-1]) / max(abs(trace[-1]), 1e-300)
            trace.append(ll)
            if delta < self.tol:
                converged = True
                break
            theta = re.mstep(resid, us, Cs, floor)
        self.beta_ = beta
        self.theta_ = theta
        self.ll_trace_ = trace
        self.converged_ = converged
        self.n_iter_ = len(trace)
        self.origin_fx_, self.pair_fx_ = re.effect_tables(us)
        if not converged:
            if self.strict:
                raise NonConvergence(len(trace), delta)
            warnings.warn(f"EM stopped after {len(trace)} iterations (relative change {delta:.2e})", ConvergenceWarning)
        return self

    @staticmethod
    def _gls(blocks, re, theta, p):
        s2 = theta.sigma2
        A = np.zeros((p, p))
        c = np.zeros(p)
        for b, Di, yi in blocks:
            G = re.G(theta, b)
            Z = b["Z"]
            M = np.eye(G.shape[0]) + G @ b["ZtZ"] / s2
            ZtD = Z.T @ Di
            Zty = Z.T @ yi
            K = np.linalg.solve(M, G) / s2
            A += Di.T @ Di - ZtD.T @ K @ ZtD
            c += Di.T @ yi - ZtD.T @ K @ Zty
        return np.linalg.solve(A, c)

    @property
    def log_likelihood_(self) -> float:
        return self.ll_trace_[-1] if self.ll_trace_ else float("nan")

    def coef_original(self) -> np.ndarray:
        """Intercept followed by slopes in input units (dropped columns get 0)."""
        sc = self.scaler_
        slopes = np.zeros(len(sc.mean_))
        slopes[sc.keep_] = self.beta_[1:] / sc.sd_[sc.keep_]
        intercept = self.beta_[0] - np.sum(slopes * sc.mean_)
        return np.concatenate([[intercept], slopes])

    def predict_fixed(self, X) -> np.ndarray:
        return self._design(X) @ self.beta_

    def predict(self, X, origin, pair) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = self.predict_fixed(X)
        if self.re_ is not None:
            slope = self.scaler_.column(X, self.slope_col) if self.slope_col is not None else np.zeros(len(X))
            out = out + self.re_.predict_effects(self.origin_fx_, self.pair_fx_, origin, pair, slope)
        return out
