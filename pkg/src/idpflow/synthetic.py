"""Seeded generator for a raw corpus with log-normal, autoregressive flows.

The generated files use the canonical CSV layouts, so they exercise the same
loaders as real data. Log flow for a pair follows

    log f(t) = mu_od + phi * (log f(t-1) - mu_od)
               + b_c * (conflict_o(t-1) - r * conflict_d(t-1))
               + b_p * price_shock_o(t-3) - b_d * distance + noise

where conflict is the standardized log event count the features also see.
A fraction of pair-months is left unrecorded (complete-case data).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import format_period, parse_period

NAMES = [
    "ALDARA", "BASRUN", "CEDRA", "DAMOUR", "ELBARA", "FARSUN", "GHADIR", "HAMRA",
    "ISKAN", "JABAL", "KARMA", "LUBNA",
]
ICEWS_CODES = ["180", "190", "193", "195"]
NOISE_CODES = ["010", "042", "057"]
COMMODITIES = {
    "Wheat flour": "FOOD", "Rice": "FOOD", "Lentils": "FOOD",
    "Diesel": "FUEL", "Gas": "FUEL",
    "Wage (daily labour)": "WAGE",
    "Exchange rate": "IGNORE",
}


@dataclass
class SyntheticSpec:
    n_provinces: int = 8
    n_months: int = 24
    start: str = "2016-01"
    lead_months: int = 6
    acled_from_month: int = 13
    phi: float = 0.3
    conflict_effect: float = 1.0
    conflict_persistence: float = 0.3
    pull_ratio: float = 0.3
    price_effect: float = 0.5
    distance_effect: float = 0.004
    noise_sd: float = 0.6
    pair_sd: float = 0.7
    observe_prob: float = 0.85
    pair_fraction: float = 0.6
    market_missing: float = 0.15
    seed: int = 0


def generate(out_dir: str | Path, spec: SyntheticSpec | None = None) -> dict[str, Path]:
    """Write gazetteer, flows, market and conflict CSVs; return their paths."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    P = spec.n_provinces
    if P > len(NAMES):
        raise ValueError(f"at most {len(NAMES)} provinces")
    names = NAMES[:P]
    lat = rng.uniform(32.5, 37.0, P)
    lon = rng.uniform(35.7, 41.5, P)
    start = parse_period(spec.start)
    L = spec.lead_months
    T = spec.n_months
    periods = np.arange(start - L, start + T)
    n_per = len(periods)

    # conflict: latent log-intensity per province, AR(1)
    base = rng.normal(0.5, 0.8, P)
    lat_c = np.zeros((P, n_per))
    for k in range(1, n_per):
        lat_c[:, k] = spec.conflict_persistence * lat_c[:, k - 1] + rng.normal(0, 0.6, P)
    counts = rng.poisson(np.exp(base[:, None] + lat_c))
    # flows respond to the recorded event counts, the same signal the features carry
    signal = np.log1p(counts)
    signal = (signal - signal.mean()) / signal.std()
    acled_from = start + spec.acled_from_month - 1

    # prices: province level times national trend, lognormal shocks
    trend = np.cumsum(rng.normal(0.01, 0.04, n_per))
    shock = np.zeros((P, n_per))
    for k in range(1, n_per):
        shock[:, k] = 0.8 * shock[:, k - 1] + rng.normal(0, 0.12, P)
    levels = {"FOOD": 450.0, "FUEL": 2000.0, "WAGE": 1400.0}

    # flows
    dist = np.zeros((P, P))
    for i in range(P):
        for j in range(P):
            dist[i, j] = _haversine_km(lat[i], lon[i], lat[j], lon[j])
    pairs = [(i, j) for i in range(P) for j in range(P) if i == j or rng.random() < spec.pair_fraction]
    mu = {pr: rng.normal(4.5 if pr[0] == pr[1] else 3.0, spec.pair_sd) for pr in pairs}
    first_seen = {pr: (0 if rng.random() < 0.7 else int(rng.integers(1, max(2, T // 3)))) for pr in pairs}
    flows = []
    for pr in pairs:
        o, d = pr
        m = mu[pr] - spec.distance_effect * dist[o, d]
        g = m
        for t in range(T):
            k = t + L
            push_pull = signal[o, k - 1] - spec.pull_ratio * signal[d, k - 1]
            g = (m + spec.phi * (g - m) + spec.conflict_effect * push_pull
                 + spec.price_effect * shock[o, k - 3] / 0.12 * 0.3 + rng.normal(0, spec.noise_sd))
            if t < first_seen[pr] or rng.random() > spec.observe_prob:
                continue
            flows.append((start + t, names[o], names[d], max(0, int(round(np.expm1(max(g, 0.0)))))))

    paths = {k: out / f"{k}.csv" for k in ("gazetteer", "flows", "market", "conflict")}
    with paths["gazetteer"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "name", "lat", "lon", "aliases"])
        for i, n in enumerate(names):
            w.writerow(["SYR", n, f"{lat[i]:.5f}", f"{lon[i]:.5f}", f"{n.title()}|{n.title()} Governorate"])
    with paths["flows"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "origin", "destination", "count"])
        for p, o, d, c in sorted(flows):
            # mixed spellings exercise alias resolution
            w.writerow([format_period(p), o.title() + (" " if c % 7 == 0 else ""), d, c])
    with paths["market"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "province", "commodity", "value"])
        for k, p in enumerate(periods):
            for i, n in enumerate(names):
                if rng.random() < spec.market_missing / 3:
                    continue  # whole province-month absent
                for com, cat in COMMODITIES.items():
                    if rng.random() < spec.market_missing:
                        continue
                    lvl = levels.get(cat, 500.0)
                    for _ in range(int(rng.integers(1, 3))):
                        v = lvl * np.exp(trend[k] + shock[i, k] + rng.normal(0, 0.05))
                        w.writerow([format_period(int(p)), n, com, f"{v:.2f}"])
    with paths["conflict"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "province", "source", "code"])
        for k, p in enumerate(periods):
            y, mth = divmod(int(p), 12)
            src = "ACLED" if p >= acled_from else "ICEWS"
            for i, n in enumerate(names):
                for _ in range(int(counts[i, k])):
                    day = int(rng.integers(1, 29))
                    code = str(rng.choice(ICEWS_CODES)) if src == "ICEWS" else ""
                    w.writerow([f"{y:04d}-{mth + 1:02d}-{day:02d}", n, src, code])
                if src == "ICEWS":
                    for _ in range(int(rng.poisson(1.0))):
                        w.writerow([f"{y:04d}-{mth + 1:02d}-15", n, src, str(rng.choice(NOISE_CODES))])
    return paths


def _haversine_km(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    h = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(np.radians(lon2 - lon1) / 2) ** 2
    return 2 * 6371.0 * np.arcsin(np.sqrt(min(1.0, h)))


def config_text(spec: SyntheticSpec, data_dir: str = ".", output: str = "run") -> str:
    """A run configuration matching a generated corpus."""
    start = parse_period(spec.start)
    icews_end = format_period(start + spec.acled_from_month - 2)
    acled_start = format_period(start + spec.acled_from_month - 1)
    first = format_period(start - spec.lead_months)
    last = format_period(start + spec.n_months - 1)
    commodities = "\n".join(f'"{k}" = "{v}"' for k, v in COMMODITIES.items())
    return f"""# synthetic corpus, seed {spec.seed}
country = "SYR"
epoch = "{spec.start}"
seed = {spec.seed}
output = "{output}"

[data]
flows = "{data_dir}/flows.csv"
market = "{data_dir}/market.csv"
gazetteer = "{data_dir}/gazetteer.csv"
icews = "{data_dir}/conflict.csv"
acled = "{data_dir}/conflict.csv"

[commodities]
{commodities}

[conflict]
icews_codes = {ICEWS_CODES!r}
icews_window = ["{first}", "{icews_end}"]
acled_window = ["{acled_start}", "{last}"]

[features]
sd_ddof = 1

[backtest]
first_month = 5
tuning_policy = "once"
scale = "log"

[[models]]
kind = "HM"

[[models]]
kind = "LOCF"

[[models]]
kind = "LMM"

[[models]]
kind = "RF"
hyperparameters = {{ n_trees = 100, min_node = 5 }}
grid = {{ mtry = [3, 4, 6] }}
"""
