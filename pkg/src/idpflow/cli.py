"""Command-line entry point: ingest, featurize, backtest, compare, report, model inspect, synth.

Every CSV written here starts with a ``# config_sha256=... corpus_sha256=...``
line and every JSON file carries the same two hashes. Files are written to a
temporary name and renamed into place. Nothing time-dependent is written, so
the same configuration and data reproduce the output tree byte for byte.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtest import METRIC_COLUMNS, MetricSet, metric_deltas, metrics_by_month, run_backtest
from .config import Corpus, RunConfig, evaluation_window, featurize, ingest, load_config, model_specs
from .corpus import write_conflict, write_flows, write_market
from .errors import IdpFlowError, MissingRun
from .interpret import interaction_depth, minimal_depth
from .models.base import ForecastBatch, load_model, save_model
from .models.lmm import ConvergenceWarning

log = logging.getLogger("idpflow")

PREDICTION_COLUMNS = ["month", "origin", "destination", "observed", "predicted", "lo", "hi", "model", "scale"]
N_REFERENCE_VARS = 4


# --- atomic, stamped writers ---------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _stamp(hashes: dict) -> str:
    return f"# config_sha256={hashes['config_sha256']} corpus_sha256={hashes['corpus_sha256']}\n"


def write_csv(path: Path, df: pd.DataFrame, hashes: dict) -> None:
    buf = io.StringIO()
    buf.write(_stamp(hashes))
    df.to_csv(buf, index=False, lineterminator="\n")
    _atomic_write(path, buf.getvalue().encode())


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, skiprows=1, keep_default_na=False, na_values=[""])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, payload: dict, hashes: dict) -> None:
    text = json.dumps(_clean({**hashes, **payload}), indent=2, sort_keys=True) + "\n"
    _atomic_write(path, text.encode())


def _via_tmp(writer, table, path: Path, hashes: dict) -> None:
    """Run a plain CSV writer into memory and re-emit it stamped."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".plain")
    writer(table, tmp)
    body = tmp.read_text()
    tmp.unlink()
    _atomic_write(path, (_stamp(hashes) + body).encode())


# --- pipeline steps ---------------------------------------------------------------------------


def _config(args) -> RunConfig:
    return load_config(
        args.config,
        country=getattr(args, "country", None),
        seed=getattr(args, "seed", None),
        out=getattr(args, "out", None),
        tune_policy=getattr(args, "tune_policy", None),
        scale=getattr(args, "scale", None),
        models=getattr(args, "models", None),
    )


def _hashes(cfg: RunConfig) -> dict:
    return {"config_sha256": cfg.config_hash, "corpus_sha256": cfg.corpus_hash()}


def _write_canonical(corpus: Corpus, out: Path, hashes: dict) -> None:
    canon = out / "canonical"
    _via_tmp(lambda g, p: g.to_csv(p), corpus.gazetteer, canon / "gazetteer.csv", hashes)
    _via_tmp(write_flows, corpus.flows, canon / "flows.csv", hashes)
    _via_tmp(write_market, corpus.market, canon / "market.csv", hashes)
    _via_tmp(write_conflict, corpus.conflict, canon / "conflict.csv", hashes)


def _prepare(cfg: RunConfig, hashes: dict, write_features: bool = True):
    corpus = ingest(cfg)
    out = cfg.output
    _write_canonical(corpus, out, hashes)
    data, report = featurize(cfg, corpus)
    if write_features:
        write_csv(out / "features.csv", data.to_frame(), hashes)
        hist = data.history[["month", "origin", "destination", "count"]]
        write_csv(out / "history.csv", hist.reset_index(drop=True), hashes)
    return corpus, data, report


def cmd_ingest(args) -> int:
    cfg = _config(args)
    hashes = _hashes(cfg)
    corpus = ingest(cfg)
    _write_canonical(corpus, cfg.output, hashes)
    report = corpus.report()
    write_json(cfg.output / "ingest_report.json", report, hashes)
    print(json.dumps(_clean(report), indent=2, sort_keys=True))
    return 0


def cmd_featurize(args) -> int:
    cfg = _config(args)
    hashes = _hashes(cfg)
    corpus, data, report = _prepare(cfg, hashes)
    manifest = {"ingest": corpus.report(), "features": report.as_dict(),
                "feature_names": list(data.names), "columns": list(data.to_frame().columns)}
    write_json(cfg.output / "features_manifest.json", manifest, hashes)
    print(f"{len(data)} feature rows, months {report.window_start}..{report.window_end}; "
          f"excluded {report.excluded}")
    return 0


def _batch_frame(batch: ForecastBatch) -> pd.DataFrame:
    n = len(batch)
    return pd.DataFrame(
        {
            "month": batch.month.astype(np.int64),
            "origin": batch.origin,
            "destination": batch.destination,
            "observed": batch.observed.astype(np.int64),
            "predicted": batch.point,
            "lo": batch.lo if batch.has_intervals else np.full(n, np.nan),
            "hi": batch.hi if batch.has_intervals else np.full(n, np.nan),
            "model": batch.kind,
            "scale": batch.scale,
        },
        columns=PREDICTION_COLUMNS,
    )


def _run_models(cfg: RunConfig, data, hashes: dict) -> tuple[pd.DataFrame, pd.DataFrame, dict]:
    window = evaluation_window(cfg, data)
    metric_rows, pred_frames, tuned = [], [], {}
    trainable_scales = {"log": ["LOG"], "raw": ["RAW"], "both": ["RAW", "LOG"]}[cfg.scale]
    for entry, specs in model_specs(cfg, len(data.names)):
        if entry.kind == "SVM":
            for scale in trainable_scales:
                metric_rows.append({"country": cfg.country, "model": "SVM", "scale": scale,
                                    **{c: np.nan for c in METRIC_COLUMNS}, "status": "not_implemented"})
            continue
        for spec in specs:
            log.info("backtesting %s (%s)", spec.kind, spec.target_scale)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                res = run_backtest(spec, data, window, cfg.tuning_policy, cfg.interval_level, cfg.folds)
            n_conv = sum(issubclass(w.category, ConvergenceWarning) for w in caught)
            for w in caught:
                if not issubclass(w.category, ConvergenceWarning):
                    warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
            if n_conv:
                log.warning("%s (%s): EM hit its iteration cap in %d fits", spec.kind, spec.target_scale, n_conv)
            metric_rows.append({"country": cfg.country, "model": spec.kind, "scale": spec.target_scale,
                                **res.metrics.as_dict(), "status": "ok"})
            pred_frames.extend(_batch_frame(b) for b in res.batches)
            key = f"{spec.kind}_{spec.target_scale}"
            tuned[key] = {"seed": spec.seed, "hyperparameters": spec.hyperparameters,
                          "tuned": {str(t): p for t, p in res.tuned.items()},
                          "em_iteration_cap_hits": n_conv}
            if res.final_model is not None:
                save_model(res.final_model, cfg.output / "models" / f"{key}.pkl", extra=hashes)
    metrics = pd.DataFrame(metric_rows, columns=["country", "model", "scale"] + METRIC_COLUMNS + ["status"])
    metrics = metrics.astype({"n_scored": "Int64", "n_sign_scored": "Int64"})
    preds = pd.concat(pred_frames, ignore_index=True) if pred_frames else pd.DataFrame(columns=PREDICTION_COLUMNS)
    preds = preds.sort_values(["model", "scale", "month", "origin", "destination"], kind="mergesort")
    info = {"window": [window.first, window.last], "tuning_policy": cfg.tuning_policy, "models": tuned}
    return metrics, preds.reset_index(drop=True), info


def _backtest(cfg: RunConfig) -> pd.DataFrame:
    hashes = _hashes(cfg)
    corpus, data, report = _prepare(cfg, hashes)
    metrics, preds, info = _run_models(cfg, data, hashes)
    write_csv(cfg.output / "metrics.csv", metrics, hashes)
    write_csv(cfg.output / "predictions.csv", preds, hashes)
    manifest = {
        "version": __version__,
        "country": cfg.country,
        "seed": cfg.seed,
        "scale": cfg.scale,
        "interval_level": cfg.interval_level,
        "ingest": corpus.report(),
        "features": report.as_dict(),
        "feature_names": list(data.names),
        **info,
    }
    write_json(cfg.output / "manifest.json", manifest, hashes)
    return metrics


def _print_table(df: pd.DataFrame) -> None:
    with pd.option_context("display.width", 200, "display.max_columns", 20):
        print(df.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


def cmd_backtest(args) -> int:
    cfg = _config(args)
    metrics = _backtest(cfg)
    _print_table(metrics)
    return 0


def cmd_compare(args) -> int:
    """Backtest at both target scales and tabulate raw-minus-log metric deltas."""
    args.scale = "both"
    cfg = _config(args)
    metrics = _backtest(cfg)
    ok = metrics[metrics["status"] == "ok"]
    rows = []
    for model, grp in ok.groupby("model", sort=False):
        by = {r["scale"]: r for _, r in grp.iterrows()}
        if model in ("HM", "LOCF") or not {"RAW", "LOG"} <= set(by):
            continue
        raw, lg = (MetricSet(**{c: by[s][c] for c in METRIC_COLUMNS}) for s in ("RAW", "LOG"))
        rows.append({"model": model, **{f"delta_{k}": v for k, v in metric_deltas(raw, lg).items()}})
    deltas = pd.DataFrame(rows, columns=["model", "delta_rmse", "delta_mae", "delta_r2", "delta_sign_accuracy"])
    write_csv(cfg.output / "raw_vs_log.csv", deltas, _hashes(cfg))
    _print_table(deltas)
    return 0


# --- report ------------------------------------------------------------------------------------


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def destination_series(preds: pd.DataFrame) -> dict[str, pd.DataFrame]:
    """Observed and forecast arrivals per destination and month, summed over origins."""
    has_iv = preds["lo"].notna().all() and preds["hi"].notna().all()
    agg = {"observed": ("observed", "sum"), "forecast": ("predicted", "sum")}
    if has_iv:
        agg.update(lo=("lo", "sum"), hi=("hi", "sum"))
    out = {}
    for dest, grp in preds.groupby("destination", sort=True):
        s = grp.groupby("month", sort=True).agg(**agg).reset_index()
        out[str(dest)] = s
    return out


def cmd_report(args) -> int:
    run = Path(args.run)
    needed = [run / "manifest.json", run / "predictions.csv", run / "history.csv"]
    for p in needed:
        if not p.exists():
            raise MissingRun(f"not a backtest run directory, missing {p}")
    manifest = json.loads((run / "manifest.json").read_text())
    hashes = {k: manifest[k] for k in ("config_sha256", "corpus_sha256")}
    preds = read_csv(run / "predictions.csv")
    history = read_csv(run / "history.csv")
    out = run / "report"
    n_files = 0
    for (model, scale), grp in preds.groupby(["model", "scale"], sort=True):
        tag = f"{model}_{scale}"
        for dest, series in destination_series(grp).items():
            write_csv(out / "series" / tag / f"{_safe(dest)}.csv", series, hashes)
            n_files += 1
        batches = [
            ForecastBatch(model, scale, g["month"].to_numpy(), g["origin"].to_numpy(object),
                          g["destination"].to_numpy(object), g["observed"].to_numpy(float),
                          g["predicted"].to_numpy(float), np.log1p(g["predicted"].to_numpy(float)))
            for _, g in grp.groupby("month", sort=True)
        ]
        write_csv(out / "metrics_by_month" / f"{tag}.csv", metrics_by_month(batches, history), hashes)
    scatter = preds[["model", "scale", "month", "origin", "destination", "observed", "predicted"]].copy()
    scatter["observed_log"] = np.log1p(scatter["observed"].astype(float))
    scatter["predicted_log"] = np.log1p(scatter["predicted"].astype(float))
    write_csv(out / "scatter.csv", scatter, hashes)
    for path in sorted((run / "models").glob("*.pkl")) if (run / "models").exists() else []:
        if not path.stem.startswith(("RF_", "MERF_")):
            continue
        model = load_model(path)
        md = minimal_depth(model)
        write_csv(out / f"minimal_depth_{path.stem}.csv", md.table, hashes)
        refs = md.ranked()[: args.references]
        write_csv(out / f"interactions_{path.stem}.csv", interaction_depth(model, refs), hashes)
    print(f"report written to {out} ({n_files} series files)")
    return 0


def cmd_model_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise FileNotFoundError(path)
    model = load_model(path)
    print(json.dumps(_clean(model.describe()), indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    from .synthetic import SyntheticSpec, config_text, generate

    spec = SyntheticSpec(seed=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    generate(out, spec)
    _atomic_write(out / "config.toml", config_text(spec, ".", "run").encode())
    print(f"synthetic corpus written to {out}")
    return 0


# --- argument parsing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idpflow", description="One-month-ahead IDP flow forecasting.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, models=True):
        p.add_argument("--config", required=True, help="run configuration (TOML)")
        p.add_argument("--country", choices=["SYR", "YEM"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (overrides the config)")
        if models:
            p.add_argument("--models", help="comma-separated roster, e.g. HM,LOCF,RF")
            p.add_argument("--tune-policy", choices=["once", "every"])

    p = sub.add_parser("ingest", help="validate raw files and write canonical tables")
    run_flags(p, models=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="build and export the feature matrix")
    run_flags(p, models=False)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("backtest", help="rolling-origin evaluation of the model roster")
    run_flags(p)
    p.add_argument("--scale", choices=["log", "raw", "both"])
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("compare", help="raw-trained minus log-trained metric deltas")
    run_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="plot-ready series and interpretation tables from a run")
    p.add_argument("--run", required=True, help="backtest output directory")
    p.add_argument("--references", type=int, default=N_REFERENCE_VARS,
                   help="number of top-ranked variables used as interaction references")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("model", help="fitted model utilities")
    msub = p.add_subparsers(dest="action", required=True)
    q = msub.add_parser("inspect", help="print hyperparameters, variance components and tree counts")
    q.add_argument("path")
    q.set_defaults(func=cmd_model_inspect)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus and matching config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IdpFlowError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
