"""Loaders for the four raw data families.

Every loader reads a canonical CSV (or a raw file through an :class:`Adapter`)
and returns an immutable pandas-backed table. Months are carried as absolute
period ordinals (``year * 12 + month - 1``); flows additionally carry the
1-based month index relative to the country's epoch.
"""
from __future__ import annotations

import csv
import logging
import re
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import pandas as pd

from .errors import (
    ConfigError,
    DateBeforeEpoch,
    DuplicateKey,
    GazetteerError,
    MalformedDate,
    MalformedRow,
    NonpositiveValue,
    UnknownProvince,
    UnmappedCommodity,
)

log = logging.getLogger(__name__)

COUNTRIES = ("SYR", "YEM")
CATEGORIES = ("FOOD", "FUEL", "WAGE")
SOURCES = ("ICEWS", "ACLED")

FLOW_COLUMNS = ("month", "origin", "destination", "count")
MARKET_COLUMNS = ("month", "province", "commodity", "value")
CONFLICT_COLUMNS = ("date", "province", "source")
GAZETTEER_COLUMNS = ("country", "name", "lat", "lon", "aliases")


class WindowViolation(UserWarning):
    """Conflict events dated outside their source's coverage window."""


_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    return _WS.sub(" ", name.strip()).upper()


def to_period(year: int, month: int) -> int:
    return year * 12 + month - 1


def period_to_ym(period: int) -> tuple[int, int]:
    return period // 12, period % 12 + 1


def format_period(period: int) -> str:
    y, m = period_to_ym(period)
    return f"{y:04d}-{m:02d}"


def parse_period(text: str, fmt: str = "%Y-%m") -> int:
    d = datetime.strptime(text.strip(), fmt)
    return to_period(d.year, d.month)


@dataclass(frozen=True)
class MonthIndex:
    index: int
    year: int
    month: int


def month_index(when: date | str, epoch: str | int) -> MonthIndex:
    """1 + whole calendar months elapsed since ``epoch`` (a ``YYYY-MM`` string or period)."""
    if isinstance(when, str):
        when = datetime.strptime(when[:10] if len(when) > 7 else when, "%Y-%m-%d" if len(when) > 7 else "%Y-%m")
    start = parse_period(epoch) if isinstance(epoch, str) else int(epoch)
    p = to_period(when.year, when.month)
    if p < start:
        raise DateBeforeEpoch(f"{when} precedes epoch {format_period(start)}")
    return MonthIndex(p - start + 1, when.year, when.month)


@dataclass(frozen=True)
class Adapter:
    """Per-source mapping from a raw file layout onto a canonical schema.

    ``columns`` maps canonical column name -> column name in the raw file.
    """

    columns: dict[str, str] = field(default_factory=dict)
    date_format: str | None = None
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: dict | None) -> "Adapter":
        if not d:
            return cls()
        unknown = set(d) - {"columns", "date_format", "delimiter"}
        if unknown:
            raise ConfigError(f"unknown adapter keys {sorted(unknown)}")
        return cls(dict(d.get("columns", {})), d.get("date_format"), d.get("delimiter", ","))


def _read_rows(path: Path, required: tuple[str, ...], adapter: Adapter | None, optional: tuple[str, ...] = ()):
    """Yield ``(line_number, row)`` with canonical keys; header is line 1."""
    adapter = adapter or Adapter()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=adapter.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(1, "empty file") from None
        pos = {}
        for col in required + optional:
            raw = adapter.columns.get(col, col)
            if raw in header:
                pos[col] = header.index(raw)
            elif col in required:
                raise MalformedRow(1, f"header lacks column {raw!r} (expected {', '.join(required)})")
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != width:
                raise MalformedRow(lineno, f"expected {width} fields, got {len(rec)}")
            yield lineno, {k: rec[i] for k, i in pos.items()}


# --- gazetteer -------------------------------------------------------------------


@dataclass(frozen=True)
class Province:
    name: str
    country: str
    lat: float
    lon: float
    aliases: tuple[str, ...] = ()


class Gazetteer:
    """Province coordinates plus the alias map used to resolve spellings."""

    def __init__(self, country: str, provinces: list[Province]):
        if country not in COUNTRIES:
            raise ConfigError(f"unknown country {country!r}")
        self.country = country
        self.provinces = {p.name: p for p in provinces}
        if len(self.provinces) != len(provinces):
            raise GazetteerError("duplicate canonical province name")
        self._alias: dict[str, str] = {}
        for p in provinces:
            if not (-90 <= p.lat <= 90 and -180 <= p.lon <= 180):
                raise GazetteerError(f"invalid coordinates for {p.name}: ({p.lat}, {p.lon})")
            for a in (p.name,) + p.aliases:
                key = normalize_name(a)
                if self._alias.get(key, p.name) != p.name:
                    raise GazetteerError(f"alias {a!r} maps to both {self._alias[key]} and {p.name}")
                self._alias[key] = p.name

    @classmethod
    def from_csv(cls, path: str | Path, country: str) -> "Gazetteer":
        provinces = []
        for line, row in _read_rows(Path(path), GAZETTEER_COLUMNS, None):
            if row["country"].strip().upper() != country:
                continue
            try:
                lat, lon = float(row["lat"]), float(row["lon"])
            except ValueError:
                raise MalformedRow(line, "non-numeric coordinate") from None
            aliases = tuple(a.strip() for a in row["aliases"].split("|") if a.strip())
            provinces.append(Province(normalize_name(row["name"]), country, lat, lon, aliases))
        if not provinces:
            raise GazetteerError(f"gazetteer {path} has no entries for {country}")
        return cls(country, provinces)

    def resolve(self, name: str, line: int | None = None) -> str:
        try:
            return self._alias[normalize_name(name)]
        except KeyError:
            raise UnknownProvince(name.strip(), line) from None

    @property
    def names(self) -> list[str]:
        return sorted(self.provinces)

    def coords(self, name: str) -> tuple[float, float]:
        p = self.provinces[name]
        return p.lat, p.lon

    def to_csv(self, path: str | Path) -> None:
        rows = [
            [p.country, p.name, repr(p.lat), repr(p.lon), "|".join(p.aliases)]
            for p in sorted(self.provinces.values(), key=lambda p: p.name)
        ]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GAZETTEER_COLUMNS)
            w.writerows(rows)


# --- flows -----------------------------------------------------------------------


@dataclass(frozen=True)
class FlowTable:
    """Observed origin->destination monthly arrivals (complete case)."""

    frame: pd.DataFrame  # month, period, origin, destination, count
    country: str
    epoch: int

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def n_months(self) -> int:
        return int(self.frame["month"].max()) if len(self.frame) else 0

    def missing_months(self) -> list[int]:
        present = set(self.frame["month"].unique())
        return [m for m in range(1, self.n_months + 1) if m not in present]


def load_flows(
    path: str | Path,
    country: str,
    gazetteer: Gazetteer,
    adapter: Adapter | None = None,
    epoch: str | None = None,
) -> FlowTable:
    fmt = (adapter.date_format if adapter else None) or "%Y-%m"
    recs = []
    seen: set[tuple[int, str, str]] = set()
    for line, row in _read_rows(Path(path), FLOW_COLUMNS, adapter):
        try:
            period = parse_period(row["month"], fmt)
        except ValueError:
            raise MalformedRow(line, f"bad month {row['month']!r}") from None
        raw_count = row["count"].strip()
        if not raw_count.isdigit():
            raise MalformedRow(line, f"bad count {raw_count!r}")
        origin = gazetteer.resolve(row["origin"], line)
        dest = gazetteer.resolve(row["destination"], line)
        key = (period, origin, dest)
        if key in seen:
            raise DuplicateKey(format_period(period), origin, dest, line)
        seen.add(key)
        recs.append((period, origin, dest, int(raw_count)))

    frame = pd.DataFrame(recs, columns=["period", "origin", "destination", "count"])
    start = parse_period(epoch) if epoch else (int(frame["period"].min()) if recs else 0)
    if recs and frame["period"].min() < start:
        raise DateBeforeEpoch(f"flow records precede epoch {format_period(start)}")
    frame.insert(0, "month", (frame["period"] - start + 1).astype("int64"))
    frame = frame.sort_values(["month", "origin", "destination"], kind="mergesort").reset_index(drop=True)
    table = FlowTable(frame, country, start)
    gaps = table.missing_months()
    if gaps:
        log.warning("flow corpus has no records for month indices %s", gaps)
    return table


def write_flows(table: FlowTable, path: str | Path) -> None:
    out = pd.DataFrame(
        {
            "month": [format_period(p) for p in table.frame["period"]],
            "origin": table.frame["origin"],
            "destination": table.frame["destination"],
            "count": table.frame["count"],
        }
    )
    out.to_csv(path, index=False, lineterminator="\n")


# --- market ----------------------------------------------------------------------


@dataclass(frozen=True)
class MarketTable:
    frame: pd.DataFrame  # period, province, commodity, category, value
    country: str
    dropped: dict[str, int]


def load_market(
    path: str | Path,
    country: str,
    commodity_map: dict[str, str],
    gazetteer: Gazetteer,
    adapter: Adapter | None = None,
    use_wage: bool | None = None,
) -> MarketTable:
    """Read price/wage records and tag each with FOOD, FUEL or WAGE.

    Yemen wage series are dropped by default (only partially available).
    """
    if use_wage is None:
        use_wage = country != "YEM"
    cmap = {}
    for k, v in commodity_map.items():
        v = v.upper()
        if v not in CATEGORIES + ("IGNORE",):
            raise ConfigError(f"commodity {k!r} mapped to unknown category {v!r}")
        cmap[k.strip().lower()] = v
    fmt = (adapter.date_format if adapter else None) or "%Y-%m"
    recs = []
    dropped = {"IGNORE": 0, "WAGE": 0}
    for line, row in _read_rows(Path(path), MARKET_COLUMNS, adapter):
        commodity = row["commodity"].strip()
        cat = cmap.get(commodity.lower())
        if cat is None:
            raise UnmappedCommodity(commodity)
        try:
            period = parse_period(row["month"], fmt)
        except ValueError:
            raise MalformedRow(line, f"bad month {row['month']!r}") from None
        try:
            value = float(row["value"])
        except ValueError:
            raise MalformedRow(line, f"bad value {row['value']!r}") from None
        if not value > 0:
            raise NonpositiveValue(line, row["value"])
        province = gazetteer.resolve(row["province"], line)
        if cat == "IGNORE" or (cat == "WAGE" and not use_wage):
            dropped[cat] += 1
            continue
        recs.append((period, province, commodity, cat, value))
    frame = pd.DataFrame(recs, columns=["period", "province", "commodity", "category", "value"])
    if dropped["WAGE"]:
        log.info("dropped %d wage records for %s", dropped["WAGE"], country)
    return MarketTable(frame, country, dropped)


def write_market(table: MarketTable, path: str | Path) -> None:
    out = pd.DataFrame(
        {
            "month": [format_period(p) for p in table.frame["period"]],
            "province": table.frame["province"],
            "commodity": table.frame["commodity"],
            "value": table.frame["value"].map(repr),
        }
    )
    out.to_csv(path, index=False, lineterminator="\n")


# --- conflict --------------------------------------------------------------------


@dataclass(frozen=True)
class ConflictTable:
    frame: pd.DataFrame  # date, period, province, source
    source: str
    window: tuple[int, int] | None
    n_filtered: int = 0
    n_outside_window: int = 0


def load_conflict(
    path: str | Path,
    source: str,
    gazetteer: Gazetteer,
    code_allowlist: list[str] | None = None,
    window: tuple[int, int] | None = None,
    adapter: Adapter | None = None,
) -> ConflictTable:
    """Read violent events for one source.

    ICEWS rows are kept only when their event code is allowlisted. Rows whose
    ``source`` column names the other dataset are skipped, so one combined file
    can feed both loaders. Rows dated outside ``window`` are kept with a
    :class:`WindowViolation` warning.
    """
    source = source.upper()
    if source not in SOURCES:
        raise ConfigError(f"unknown conflict source {source!r}")
    if source == "ICEWS" and code_allowlist is None:
        raise ConfigError("ICEWS events need an event-code allowlist")
    allow = {c.strip() for c in code_allowlist} if code_allowlist is not None else None
    fmt = (adapter.date_format if adapter else None) or "%Y-%m-%d"
    optional = ("source", "code") if allow is not None else ("source",)
    recs = []
    filtered = outside = 0
    for line, row in _read_rows(Path(path), ("date", "province"), adapter, optional):
        if "source" in row and row["source"].strip() and row["source"].strip().upper() != source:
            continue
        if allow is not None:
            if "code" not in row:
                raise ConfigError(f"{path}: code allowlist supplied but file has no code column")
            if row["code"].strip() not in allow:
                filtered += 1
                continue
        try:
            d = datetime.strptime(row["date"].strip(), fmt).date()
        except ValueError:
            raise MalformedDate(row["date"], line) from None
        province = gazetteer.resolve(row["province"], line)
        period = to_period(d.year, d.month)
        if window is not None and not (window[0] <= period <= window[1]):
            outside += 1
        recs.append((d, period, province, source))
    if outside:
        warnings.warn(
            f"{outside} {source} events fall outside the coverage window", WindowViolation, stacklevel=2
        )
    frame = pd.DataFrame(recs, columns=["date", "period", "province", "source"])
    return ConflictTable(frame, source, window, filtered, outside)


def write_conflict(tables: list[ConflictTable], path: str | Path) -> None:
    frames = [t.frame for t in tables]
    out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CONFLICT_COLUMNS)
    out = pd.DataFrame(
        {"date": [d.isoformat() for d in out["date"]], "province": out["province"], "source": out["source"]}
    )
    out.to_csv(path, index=False, lineterminator="\n")
