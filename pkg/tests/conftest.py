from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np
import pytest

from idpflow.config import featurize, ingest, load_config
from idpflow.corpus import format_period, parse_period

ROOT = Path(__file__).resolve().parents[1]
SYNTHETIC_CONFIG = ROOT / "configs" / "synthetic.toml"

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def _write(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


TOY_COORDS = {
    "ALPHA": (33.5, 36.3),
    "BETA": (36.2, 37.2),
    "GAMMA": (34.7, 36.7),
    "DELTA": (35.9, 39.0),
    "EPSILON": (32.6, 36.1),
}


def make_toy(
    root: Path,
    n_months: int = 3,
    names=("ALPHA", "BETA", "GAMMA"),
    destinations=None,
    lead: int = 4,
    models=("HM", "LOCF"),
    seed: int = 0,
    epoch: str = "2020-01",
    first_month: int = 2,
    wage: bool = True,
    model_block: str = "",
) -> Path:
    """Write a small, fully valid corpus plus config; returns the config path."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    start = parse_period(epoch)
    destinations = list(names) if destinations is None else list(destinations)
    _write(root / "gazetteer.csv", ["country", "name", "lat", "lon", "aliases"],
           [["SYR", n, *TOY_COORDS[n], n.title()] for n in names])
    flows = []
    for m in range(n_months):
        for o in names:
            for d in destinations:
                flows.append([format_period(start + m), o, d, int(rng.integers(0, 60))])
    _write(root / "flows.csv", ["month", "origin", "destination", "count"], flows)
    market = []
    for p in range(start - lead, start + n_months):
        for n in names:
            market.append([format_period(p), n, "Bread", f"{rng.uniform(100, 200):.2f}"])
            market.append([format_period(p), n, "Diesel", f"{rng.uniform(300, 500):.2f}"])
            if wage:
                market.append([format_period(p), n, "Wage", f"{rng.uniform(900, 1100):.2f}"])
    _write(root / "market.csv", ["month", "province", "commodity", "value"], market)
    events = []
    for p in range(start - lead, start + n_months):
        y, mth = divmod(p, 12)
        for n in names:
            for _ in range(int(rng.integers(0, 6))):
                events.append([f"{y:04d}-{mth + 1:02d}-{int(rng.integers(1, 28)):02d}", n, "ICEWS", "190"])
    _write(root / "conflict.csv", ["date", "province", "source", "code"], events)
    roster = "".join(f'\n[[models]]\nkind = "{k}"\n' for k in models)
    text = f"""country = "SYR"
epoch = "{epoch}"
seed = {seed}
output = "run"

[data]
flows = "flows.csv"
market = "market.csv"
gazetteer = "gazetteer.csv"
icews = "conflict.csv"

[commodities]
Bread = "FOOD"
Diesel = "FUEL"
Wage = "WAGE"

[conflict]
icews_codes = ["190"]
icews_window = ["{format_period(start - lead)}", "{format_period(start + n_months - 1)}"]

[backtest]
first_month = {first_month}
{roster}{model_block}"""
    cfg = root / "config.toml"
    cfg.write_text(text)
    return cfg


@pytest.fixture
def toy(tmp_path):
    return make_toy(tmp_path / "toy")


@pytest.fixture(scope="session")
def synthetic_data():
    """Feature matrix of the vendored synthetic corpus."""
    cfg = load_config(SYNTHETIC_CONFIG)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        corpus = ingest(cfg)
        data, report = featurize(cfg, corpus)
    return cfg, data


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    cfg = load_config(make_toy(tmp_path_factory.mktemp("toy8"), n_months=8, names=tuple(TOY_COORDS), seed=3))
    corpus = ingest(cfg)
    data, _ = featurize(cfg, corpus)
    return data
