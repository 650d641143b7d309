"""Covariate panels and the model-ready feature matrix."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .corpus import ConflictTable, FlowTable, Gazetteer, MarketTable, format_period
from .errors import ConfigError, CoverageGap, DegenerateVariance, NegativeFlow, WholeMonthMissing

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
PRICE_LAG = 3
CONFLICT_LAGS = (1, 3)


def log_transform(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise NegativeFlow("flow must be non-negative")
    return np.log1p(y)


def inv_transform(y_log):
    return np.maximum(0.0, np.expm1(np.asarray(y_log, dtype=float)))


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees."""
    phi1, phi2 = math.radians(a[0]), math.radians(b[0])
    dphi = phi2 - phi1
    dlam = math.radians(b[1] - a[1])
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


def distance_matrix(gazetteer: Gazetteer) -> pd.DataFrame:
    names = gazetteer.names
    n = len(names)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = haversine(gazetteer.coords(names[i]), gazetteer.coords(names[j]))
    return pd.DataFrame(d, index=names, columns=names)


# --- prices and wages ------------------------------------------------------------


def aggregate_market(
    table: MarketTable, provinces: list[str] | None = None, periods: range | None = None
) -> pd.DataFrame:
    """Median value per (province, month, category); empty cells are NaN.

    Returns a frame indexed by (province, period) with one column per category.
    """
    f = table.frame
    cats = sorted(f["category"].unique()) if len(f) else []
    med = f.groupby(["province", "period", "category"])["value"].median().unstack("category")
    if provinces is None:
        provinces = sorted(f["province"].unique())
    if periods is None:
        periods = range(int(f["period"].min()), int(f["period"].max()) + 1) if len(f) else range(0)
    grid = pd.MultiIndex.from_product([list(provinces), list(periods)], names=["province", "period"])
    return med.reindex(index=grid, columns=cats)


def impute_within_month(panel: pd.DataFrame) -> tuple[pd.DataFrame, dict[int, int]]:
    """Fill each missing cell with that month's median over provinces.

    Returns the filled panel and the number of imputed cells per period.
    """
    out = panel.copy()
    counts: dict[int, int] = {}
    periods = panel.index.get_level_values("period")
    month_median = panel.groupby(level="period").median()
    for cat in panel.columns:
        col = panel[cat]
        missing = col.isna().to_numpy()
        if not missing.any():
            continue
        fill = month_median[cat].reindex(periods).to_numpy()
        bad = missing & np.isnan(fill)
        if bad.any():
            raise WholeMonthMissing(int(periods[np.argmax(bad)]), cat)
        out.loc[missing, cat] = fill[missing]
        for p, c in pd.Series(periods[missing]).value_counts().items():
            counts[int(p)] = counts.get(int(p), 0) + int(c)
    return out, dict(sorted(counts.items()))


def market_coverage(panel: pd.DataFrame) -> tuple[int, int] | None:
    """Longest-edge trim: first..last period where every category has some value."""
    has = panel.notna().groupby(level="period").any().all(axis=1)
    ok = has[has].index
    if len(ok) == 0:
        return None
    return int(ok.min()), int(ok.max())


# --- conflict --------------------------------------------------------------------


def conflict_intensity(
    tables: list[ConflictTable], provinces: list[str], ddof: int = 1
) -> pd.DataFrame:
    """Monthly event counts per province, z-scored separately per source.

    Each source contributes only its coverage window; province-months with no
    events count as zero. Output columns: province, period, source, count,
    intensity.
    """
    parts = []
    spans = []
    for t in tables:
        f = t.frame
        if t.window is not None:
            lo, hi = t.window
        elif len(f):
            lo, hi = int(f["period"].min()), int(f["period"].max())
        else:
            continue
        for other in spans:
            if lo <= other[1] and other[0] <= hi:
                raise ConfigError(f"conflict source windows overlap: {t.source} {format_period(lo)}..{format_period(hi)}")
        spans.append((lo, hi))
        inside = f[(f["period"] >= lo) & (f["period"] <= hi)]
        counts = inside.groupby(["province", "period"]).size()
        grid = pd.MultiIndex.from_product([provinces, range(lo, hi + 1)], names=["province", "period"])
        c = counts.reindex(grid, fill_value=0).astype(float)
        sd = c.std(ddof=ddof)
        if not sd > 0:
            raise DegenerateVariance(t.source)
        z = (c - c.mean()) / sd
        part = pd.DataFrame({"source": t.source, "count": c, "intensity": z}).reset_index()
        parts.append(part)
    if not parts:
        return pd.DataFrame(columns=["province", "period", "source", "count", "intensity"])
    return pd.concat(parts, ignore_index=True).sort_values(["period", "province"], kind="mergesort").reset_index(drop=True)


# --- feature matrix --------------------------------------------------------------


@dataclass
class CovariatePanel:
    prices: pd.DataFrame  # (province, period) -> FOOD, FUEL[, WAGE]
    conflict: pd.DataFrame  # province, period, source, count, intensity
    price_span: tuple[int, int]
    imputed: dict[int, int] = field(default_factory=dict)

    @property
    def has_wage(self) -> bool:
        return "WAGE" in self.prices.columns


def build_covariates(
    market: MarketTable, conflict: list[ConflictTable], provinces: list[str], ddof: int = 1
) -> CovariatePanel:
    raw = aggregate_market(market, provinces)
    span = market_coverage(raw)
    if span is None:
        raise CoverageGap(0, "prices")
    raw = raw[(raw.index.get_level_values("period") >= span[0]) & (raw.index.get_level_values("period") <= span[1])]
    prices, imputed = impute_within_month(raw)
    return CovariatePanel(prices, conflict_intensity(conflict, provinces, ddof), span, imputed)


def feature_names(has_wage: bool) -> list[str]:
    side = ["food", "fuel"] + (["wage"] if has_wage else []) + ["conflict_l1", "conflict_l3"]
    return ["date_index"] + [f"{s}_o" for s in side] + [f"{s}_d" for s in side] + ["distance", "ar"]


@dataclass
class FeatureMatrix:
    """Model-ready rows plus the raw flow history they were built from.

    ``history`` holds every observed flow (month, origin, destination, count);
    persistence baselines and the sign-accuracy reference read from it.
    """

    month: np.ndarray
    origin: np.ndarray
    destination: np.ndarray
    X: np.ndarray
    y: np.ndarray
    names: list[str]
    history: pd.DataFrame
    country: str = ""

    def __len__(self) -> int:
        return len(self.y)

    @property
    def y_log(self) -> np.ndarray:
        return np.log1p(self.y)

    @property
    def pair(self) -> np.ndarray:
        return np.char.add(np.char.add(self.origin.astype(str), "|"), self.destination.astype(str))

    def col(self, name: str) -> int:
        return self.names.index(name)

    def subset(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(
            self.month[mask], self.origin[mask], self.destination[mask], self.X[mask], self.y[mask],
            self.names, self.history, self.country,
        )

    def before(self, t: int) -> "FeatureMatrix":
        """Rows with month < t, with history truncated the same way."""
        sub = self.subset(self.month < t)
        sub.history = self.history[self.history["month"] < t]
        return sub

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.names)
        df.insert(0, "destination", self.destination)
        df.insert(0, "origin", self.origin)
        df.insert(0, "month", self.month)
        df["y"] = self.y.astype(np.int64)
        df["y_log"] = self.y_log
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame, history: pd.DataFrame, country: str = "") -> "FeatureMatrix":
        names = [c for c in df.columns if c not in ("month", "origin", "destination", "y", "y_log")]
        return cls(
            df["month"].to_numpy(np.int64), df["origin"].to_numpy(object), df["destination"].to_numpy(object),
            df[names].to_numpy(float), df["y"].to_numpy(float), names, history, country,
        )


@dataclass
class AssemblyReport:
    window_start: int
    window_end: int
    n_rows: int
    excluded: dict[str, int]
    imputed_per_month: dict[str, int]

    def as_dict(self) -> dict:
        return {
            "window_start": self.window_start,
            "window_end": self.window_end,
            "n_rows": self.n_rows,
            "excluded_rows": self.excluded,
            "imputed_cells_per_month": self.imputed_per_month,
        }


def assemble(
    flows: FlowTable,
    covariates: CovariatePanel,
    distances: pd.DataFrame,
    window_start: int = 1,
    use_wage: bool | None = None,
) -> tuple[FeatureMatrix, AssemblyReport]:
    """One row per observed flow at month >= window_start.

    Prices and wages enter at t-3, conflict at t-1 and t-3, ``ar`` is the
    pair's flow at t-1 (0 when unrecorded). Rows whose lagged covariates
    precede data coverage are excluded and counted; a hole inside coverage
    raises :class:`CoverageGap`.
    """
    if use_wage is None:
        use_wage = covariates.has_wage
    if use_wage and not covariates.has_wage:
        raise ConfigError("wage features requested but the market table has no wage records")
    f = flows.frame
    f = f[f["month"] >= window_start]
    names = feature_names(use_wage)
    n = len(f)
    period = f["period"].to_numpy()
    origin = f["origin"].to_numpy(object)
    dest = f["destination"].to_numpy(object)
    keep = np.ones(n, dtype=bool)
    excluded = {"prices_before_coverage": 0, "conflict_before_coverage": 0}

    price_cats = ["FOOD", "FUEL"] + (["WAGE"] if use_wage else [])
    p_lo, p_hi = covariates.price_span
    lagp = period - PRICE_LAG
    early = lagp < p_lo
    excluded["prices_before_coverage"] = int((early & keep).sum())
    keep &= ~early
    late = lagp > p_hi
    if (late & keep).any():
        raise CoverageGap(int(f["month"].to_numpy()[np.argmax(late & keep)]), "prices")

    conf = covariates.conflict.set_index(["province", "period"])["intensity"]
    c_lo = int(covariates.conflict["period"].min()) if len(conf) else 0
    for lag in CONFLICT_LAGS:
        early = (period - lag) < c_lo
        excluded["conflict_before_coverage"] += int((early & keep).sum())
        keep &= ~early

    period, origin, dest = period[keep], origin[keep], dest[keep]
    months = f["month"].to_numpy()[keep]

    def price_lookup(prov, cat):
        idx = pd.MultiIndex.from_arrays([prov, period - PRICE_LAG])
        vals = covariates.prices[cat].reindex(idx).to_numpy(float)
        if np.isnan(vals).any():
            raise CoverageGap(int(months[np.argmax(np.isnan(vals))]), cat.lower())
        return vals

    def conflict_lookup(prov, lag):
        idx = pd.MultiIndex.from_arrays([prov, period - lag])
        vals = conf.reindex(idx).to_numpy(float)
        if np.isnan(vals).any():
            raise CoverageGap(int(months[np.argmax(np.isnan(vals))]), f"conflict_l{lag}")
        return vals

    cols = [months.astype(float)]
    for prov in (origin, dest):
        cols += [price_lookup(prov, c) for c in price_cats]
        cols += [conflict_lookup(prov, lag) for lag in CONFLICT_LAGS]
    cols.append(np.array([distances.at[o, d] for o, d in zip(origin, dest)], dtype=float))
    prev = flows.frame.set_index(["month", "origin", "destination"])["count"]
    ar_idx = pd.MultiIndex.from_arrays([months - 1, origin, dest])
    cols.append(prev.reindex(ar_idx).fillna(0).to_numpy(float))
    X = np.column_stack(cols) if n else np.zeros((0, len(names)))
    y = f["count"].to_numpy(float)[keep]

    fm = FeatureMatrix(months.astype(np.int64), origin, dest, X, y, names, flows.frame, flows.country)
    report = AssemblyReport(
        window_start=int(months.min()) if len(months) else window_start,
        window_end=int(months.max()) if len(months) else window_start,
        n_rows=len(y),
        excluded=excluded,
        imputed_per_month={format_period(p): c for p, c in covariates.imputed.items()},
    )
    if sum(excluded.values()):
        log.info("excluded %s rows for lag coverage", excluded)
    return fm, report
