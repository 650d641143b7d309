"""Run configuration (TOML) and the ingest -> featurize pipeline.

Grammar, by table:

* top level: ``country`` (SYR|YEM), ``epoch`` (YYYY-MM, optional), ``seed``,
  ``output`` (run directory)
* ``[data]``: ``flows``, ``market``, ``gazetteer``, ``icews``, ``acled``
  (paths, relative to the config file)
* ``[adapters.<flows|market|icews|acled>]``: ``columns`` (canonical -> raw),
  ``date_format``, ``delimiter``
* ``[commodities]``: commodity name -> FOOD | FUEL | WAGE | IGNORE
* ``[conflict]``: ``icews_codes``, ``icews_window``, ``acled_window``
  (pairs of YYYY-MM)
* ``[features]``: ``sd_ddof`` (1 sample / 0 population), ``window_start``,
  ``use_wage``
* ``[backtest]``: ``first_month``, ``last_month``, ``tuning_policy``
  (once|every), ``folds``, ``scale`` (log|raw|both), ``interval_level``
* ``[[models]]``: ``kind``, ``seed``, ``hyperparameters`` and ``grid`` tables
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backtest import DEFAULT_FIRST_MONTH, TUNING_POLICIES, EvaluationWindow
from .corpus import (
    COUNTRIES,
    Adapter,
    ConflictTable,
    FlowTable,
    Gazetteer,
    MarketTable,
    load_conflict,
    load_flows,
    load_market,
    parse_period,
)
from .errors import ConfigError
from .featurize import AssemblyReport, FeatureMatrix, assemble, build_covariates, distance_matrix
from .models.base import BASELINES, KINDS, ForecasterSpec, default_grid

_TOP = {"country", "epoch", "seed", "output", "data", "adapters", "commodities", "conflict", "features", "backtest", "models"}
_SCALES = ("log", "raw", "both")


@dataclass
class ModelEntry:
    kind: str
    seed: int | None = None
    hyperparameters: dict = field(default_factory=dict)
    grid: dict | None = None
    use_default_grid: bool = True


@dataclass
class RunConfig:
    country: str
    paths: dict[str, Path]
    adapters: dict[str, Adapter]
    commodities: dict[str, str]
    icews_codes: list[str] | None
    windows: dict[str, tuple[int, int] | None]
    epoch: str | None = None
    seed: int = 0
    output: Path = Path("run")
    sd_ddof: int = 1
    window_start: int = 1
    use_wage: bool | None = None
    first_month: int | None = None
    last_month: int | None = None
    tuning_policy: str = "once"
    folds: int = 5
    scale: str = "log"
    interval_level: float = 0.95
    models: list[ModelEntry] = field(default_factory=list)
    source_text: str = ""
    overrides: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        h = hashlib.sha256(self.source_text.encode())
        # the output location does not change what is computed
        kept = {k: v for k, v in self.overrides.items() if k != "out"}
        h.update(json.dumps(kept, sort_keys=True).encode())
        return h.hexdigest()

    def corpus_hash(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.paths):
            p = self.paths[key]
            h.update(key.encode())
            if p.exists():
                h.update(p.read_bytes())
        return h.hexdigest()


def _window(v, name):
    if v is None:
        return None
    if not (isinstance(v, list) and len(v) == 2):
        raise ConfigError(f"{name} must be a pair of YYYY-MM strings")
    try:
        return parse_period(v[0]), parse_period(v[1])
    except ValueError:
        raise ConfigError(f"{name}: bad month in {v}") from None


def load_config(path: str | Path, **overrides) -> RunConfig:
    """Parse and fully validate a run configuration; ``overrides`` mirror CLI flags."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    base = path.parent
    country = str(overrides.get("country") or raw.get("country", "")).upper()
    if country not in COUNTRIES:
        raise ConfigError(f"country must be one of {COUNTRIES}, got {country!r}")
    if overrides.get("country") and raw.get("country") and raw["country"].upper() != country:
        raise ConfigError(f"--country {country} disagrees with config country {raw['country']}")
    data = raw.get("data", {})
    for key in ("flows", "market", "gazetteer"):
        if key not in data:
            raise ConfigError(f"[data] lacks {key!r}")
    paths = {k: (base / v).resolve() for k, v in data.items()}
    if not ({"icews", "acled"} & set(paths)):
        raise ConfigError("[data] needs at least one of icews/acled")
    adapters = {k: Adapter.from_dict(v) for k, v in raw.get("adapters", {}).items()}
    conflict = raw.get("conflict", {})
    feats = raw.get("features", {})
    bt = raw.get("backtest", {})
    seed = int(overrides.get("seed") if overrides.get("seed") is not None else raw.get("seed", 0))

    cfg = RunConfig(
        country=country,
        paths=paths,
        adapters=adapters,
        commodities=dict(raw.get("commodities", {})),
        icews_codes=conflict.get("icews_codes"),
        windows={
            "ICEWS": _window(conflict.get("icews_window"), "icews_window"),
            "ACLED": _window(conflict.get("acled_window"), "acled_window"),
        },
        epoch=raw.get("epoch"),
        seed=seed,
        output=Path(overrides.get("out") or (base / raw.get("output", "run"))),
        sd_ddof=int(feats.get("sd_ddof", 1)),
        window_start=int(feats.get("window_start", 1)),
        use_wage=feats.get("use_wage"),
        first_month=bt.get("first_month", DEFAULT_FIRST_MONTH.get(country)),
        last_month=bt.get("last_month"),
        tuning_policy=str(overrides.get("tune_policy") or bt.get("tuning_policy", "once")),
        folds=int(bt.get("folds", 5)),
        scale=str(overrides.get("scale") or bt.get("scale", "log")).lower(),
        interval_level=float(bt.get("interval_level", 0.95)),
        source_text=text,
        overrides={k: v for k, v in sorted(overrides.items()) if v is not None},
    )
    if cfg.sd_ddof not in (0, 1):
        raise ConfigError("features.sd_ddof must be 0 or 1")
    if cfg.tuning_policy not in TUNING_POLICIES:
        raise ConfigError(f"tuning_policy must be one of {TUNING_POLICIES}")
    if cfg.scale not in _SCALES:
        raise ConfigError(f"scale must be one of {_SCALES}")
    if not 0 < cfg.interval_level < 1:
        raise ConfigError("interval_level must lie in (0, 1)")
    if cfg.epoch is not None:
        try:
            parse_period(cfg.epoch)
        except ValueError:
            raise ConfigError(f"bad epoch {cfg.epoch!r}") from None

    entries = []
    for m in raw.get("models", []):
        bad = set(m) - {"kind", "seed", "hyperparameters", "grid"}
        if bad:
            raise ConfigError(f"unknown model keys {sorted(bad)}")
        kind = str(m.get("kind", "")).upper()
        if kind == "SVM":
            entries.append(ModelEntry("SVM"))
            continue
        if kind not in KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        entry = ModelEntry(kind, m.get("seed"), dict(m.get("hyperparameters", {})), m.get("grid"), "grid" not in m)
        ForecasterSpec(kind, entry.hyperparameters, 0, "LOG", entry.grid)  # validates keys
        entries.append(entry)
    wanted = overrides.get("models")
    if wanted:
        names = [w.strip().upper() for w in (wanted.split(",") if isinstance(wanted, str) else wanted)]
        have = {e.kind: e for e in entries}
        entries = [have.get(n) or ModelEntry(n) for n in names]
        for e in entries:
            if e.kind not in KINDS + ("SVM",):
                raise ConfigError(f"unknown model kind {e.kind!r}")
    cfg.models = entries
    return cfg


def model_specs(cfg: RunConfig, n_features: int) -> list[tuple[ModelEntry, list[ForecasterSpec]]]:
    """Expand the roster to one spec per (model, target scale).

    Baselines always run on both raw and log flow. Trainable models follow
    the configured scale.
    """
    out = []
    for i, e in enumerate(cfg.models):
        if e.kind == "SVM":
            out.append((e, []))
            continue
        seed = e.seed if e.seed is not None else cfg.seed + i
        if e.kind in BASELINES:
            scales = ["RAW", "LOG"]
        else:
            scales = {"log": ["LOG"], "raw": ["RAW"], "both": ["RAW", "LOG"]}[cfg.scale]
        grid = e.grid
        if grid is None and e.use_default_grid:
            grid = default_grid(e.kind, n_features)
            if grid:
                grid = {k: v for k, v in grid.items() if k not in e.hyperparameters}
        out.append((e, [ForecasterSpec(e.kind, e.hyperparameters, seed, s, grid or None) for s in scales]))
    return out


@dataclass
class Corpus:
    gazetteer: Gazetteer
    flows: FlowTable
    market: MarketTable
    conflict: list[ConflictTable]

    def report(self) -> dict:
        return {
            "country": self.flows.country,
            "flow_rows": len(self.flows),
            "months": self.flows.n_months,
            "months_without_records": self.flows.missing_months(),
            "provinces": len(self.gazetteer.names),
            "market_rows": len(self.market.frame),
            "market_dropped": self.market.dropped,
            "conflict_rows": {t.source: len(t.frame) for t in self.conflict},
            "conflict_filtered_by_code": {t.source: t.n_filtered for t in self.conflict},
            "conflict_outside_window": {t.source: t.n_outside_window for t in self.conflict},
        }


def ingest(cfg: RunConfig) -> Corpus:
    for key, p in cfg.paths.items():
        if not p.exists():
            raise FileNotFoundError(f"{key} file not found: {p}")
    gaz = Gazetteer.from_csv(cfg.paths["gazetteer"], cfg.country)
    flows = load_flows(cfg.paths["flows"], cfg.country, gaz, cfg.adapters.get("flows"), cfg.epoch)
    market = load_market(
        cfg.paths["market"], cfg.country, cfg.commodities, gaz, cfg.adapters.get("market"), cfg.use_wage
    )
    conflict = []
    for source in ("ICEWS", "ACLED"):
        key = source.lower()
        if key in cfg.paths:
            conflict.append(
                load_conflict(
                    cfg.paths[key], source, gaz,
                    cfg.icews_codes if source == "ICEWS" else None,
                    cfg.windows[source], cfg.adapters.get(key),
                )
            )
    return Corpus(gaz, flows, market, conflict)


def featurize(cfg: RunConfig, corpus: Corpus) -> tuple[FeatureMatrix, AssemblyReport]:
    cov = build_covariates(corpus.market, corpus.conflict, corpus.gazetteer.names, cfg.sd_ddof)
    return assemble(corpus.flows, cov, distance_matrix(corpus.gazetteer), cfg.window_start, cfg.use_wage)


def evaluation_window(cfg: RunConfig, data: FeatureMatrix) -> EvaluationWindow:
    n_months = int(data.history["month"].max())
    first = cfg.first_month if cfg.first_month is not None else 2
    last = cfg.last_month if cfg.last_month is not None else n_months
    return EvaluationWindow(int(first), int(last), cfg.country)
