"""Command-line front end.

Inputs must already be preprocessed (detrended, deseasonalized); the
column order of the data file defines the pivot order.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CoparError, DomainError, FitError, IngestError, NumericalError
from .forecast import ForecastRequest, Mode, forecast
from .inference import fit_var, granger_test, mean_interval_score, rmse, var_forecast
from .margins import MarginFamily
from .model import (
    CoparModel,
    fit_copar,
    fit_copar_sequential,
    independence_order,
    select_order,
    simulate_copar,
)
from .pair_copulas import parse_families


@dataclass(frozen=True, eq=False)
class Dataset:
    names: tuple[str, ...]
    values: np.ndarray  # (T, m)
    timestamps: tuple[str, ...] | None = None
    timestamp_name: str | None = None

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> int:
        return self.values.shape[0]

    def select(self, columns: Sequence[str]) -> "Dataset":
        idx = []
        for c in columns:
            if c not in self.names:
                raise DomainError(f"unknown column {c!r}")
            idx.append(self.names.index(c))
        return Dataset(tuple(self.names[i] for i in idx), self.values[:, idx], self.timestamps, self.timestamp_name)


def _is_number(cell: str) -> bool:
    try:
        return math.isfinite(float(cell))
    except ValueError:
        return False


def ingest_csv(path) -> Dataset:
    """Read a header + one-row-per-time-point CSV.

    An optional non-numeric first column holds timestamps; lines starting
    with '#' (the seed/config echo of other commands) are skipped.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if not ln.lstrip().startswith("#")]
    rows = [r for r in csv.reader(lines) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise IngestError("file needs a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    first = body[0][0].strip() if body[0] else ""
    has_ts = first != "" and not _is_number(first)
    start = 1 if has_ts else 0
    names = tuple(header[start:])
    if len(names) < 2:
        raise IngestError("need at least two numeric columns")
    vals = np.empty((len(body), len(names)))
    stamps = []
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise IngestError(f"row {r} has {len(row)} cells, expected {len(header)}")
        if has_ts:
            stamps.append(row[0].strip())
        for c in range(start, len(header)):
            cell = row[c].strip()
            if cell == "":
                raise IngestError(f"missing value at row {r}, column {c + 1}")
            if not _is_number(cell):
                raise IngestError(f"non-numeric value {cell!r} at row {r}, column {c + 1}")
            vals[r - 1, c - start] = float(cell)
    return Dataset(names, vals, tuple(stamps) if has_ts else None, header[0] if has_ts else None)


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ([ds.timestamp_name] if ds.timestamps is not None else []) + list(ds.names)
    w.writerow(head)
    for t in range(ds.T):
        row = [repr(float(v)) for v in ds.values[t]]
        if ds.timestamps is not None:
            row = [ds.timestamps[t]] + row
        w.writerow(row)
    return buf.getvalue()


def bundled(name: str) -> Path:
    """Path of a bundled fixture (``example_model.txt``, ``independent.csv``)."""
    return Path(str(resources.files("copar") / "data" / name))


# ---------------------------------------------------------------------------
# configuration

_DEFAULTS = {
    "order": 1,
    "k_max": 4,
    "criterion": "bic",
    "families": "all",
    "margins": "norm",
    "samples": 10_000,
    "alpha": 0.05,
    "seed": 0,
    "split": None,
    "mode": "joint",
    "horizon": 1,
    "n": 500,
    "refine": True,
}
_TYPES = {"order": int, "k_max": int, "samples": int, "alpha": float, "seed": int,
          "split": int, "horizon": int, "n": int}


def read_config(path) -> dict:
    """key=value lines; '#' starts a comment; keys may use '-' or '_'."""
    cfg = {}
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {no}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _DEFAULTS and key not in ("data", "out", "model", "columns", "conditioning", "fan"):
            raise DomainError(f"config line {no}: unknown key {key!r}")
        cfg[key] = val
    return cfg


def _resolve(args: argparse.Namespace) -> dict:
    cfg = read_config(args.config) if args.config else {}
    out = dict(_DEFAULTS)
    for key, val in cfg.items():
        out[key] = val
    explicit = set(cfg)
    for key, val in vars(args).items():
        if key in ("command", "config", "func") or val is None:
            continue
        out[key] = val
        explicit.add(key)
    out["_explicit"] = frozenset(explicit)
    for key, typ in _TYPES.items():
        if out.get(key) is not None:
            try:
                out[key] = typ(out[key])
            except (TypeError, ValueError):
                raise DomainError(f"invalid value for {key}: {out[key]!r}") from None
    if isinstance(out["refine"], str):
        out["refine"] = out["refine"].lower() in ("1", "true", "yes", "on")
    if not 0.0 < out["alpha"] < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if out["samples"] < 100:
        raise DomainError("samples must be at least 100")
    if out["criterion"].lower() not in ("aic", "bic", "hqc"):
        raise DomainError(f"criterion must be aic, bic or hqc, got {out['criterion']!r}")
    Mode.parse(out["mode"])
    return out


def _echo(cmd: str, cfg: dict, keys: Sequence[str]) -> str:
    items = " ".join(f"{k}={cfg.get(k)}" for k in keys)
    return f"# copar {cmd}\n# seed={cfg['seed']}\n# config: {items}\n"


def _data(cfg: dict) -> Dataset:
    if not cfg.get("data"):
        raise DomainError("--data is required")
    ds = ingest_csv(cfg["data"])
    if cfg.get("columns"):
        ds = ds.select([c.strip() for c in str(cfg["columns"]).split(",") if c.strip()])
    return ds


def _margins(cfg: dict, m: int):
    items = [s.strip() for s in str(cfg["margins"]).split(",") if s.strip()]
    fams = [MarginFamily.from_code(s) for s in items]
    if len(fams) == 1:
        fams = fams * m
    if len(fams) != m:
        raise DomainError(f"margins: need 1 or {m} families")
    return fams


def _emit(text: str, cfg: dict) -> None:
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


# ---------------------------------------------------------------------------
# commands

def cmd_fit(cfg: dict) -> str:
    ds = _data(cfg)
    model, rep = fit_copar(ds.values, cfg["order"], _margins(cfg, ds.m), parse_families(cfg["families"]),
                           refine=cfg["refine"], names=ds.names)
    head = _echo("fit", cfg, ["data", "order", "families", "margins", "refine"])
    return head + model.to_text(rep)


def cmd_order_select(cfg: dict) -> str:
    ds = _data(cfg)
    sel = select_order(ds.values, cfg["k_max"], cfg["criterion"], _margins(cfg, ds.m))
    k_ind = independence_order(ds.values, cfg["k_max"], margin_families=_margins(cfg, ds.m))
    lines = [_echo("order-select", cfg, ["data", "k_max", "criterion", "margins"]).rstrip("\n"),
             f"# criterion order: {sel.k_star} ({sel.criterion})",
             f"# independence-test order: {k_ind}",
             "k,loglik,n_params,aic,bic,hqc,selected"]
    for k, r in sel.reports.items():
        lines.append(",".join([str(k), _fmt(r.loglik), str(r.n_params), _fmt(r.aic), _fmt(r.bic),
                               _fmt(r.hqc), "*" if k == sel.k_star else ""]))
    return "\n".join(lines) + "\n"


def _load_model(cfg: dict) -> CoparModel:
    path = cfg.get("model")
    if not path:
        raise DomainError("--model is required")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DomainError(f"cannot read model file {path}: {exc}") from exc
    return CoparModel.from_text(text)[0]


def cmd_forecast(cfg: dict) -> str:
    ds = _data(cfg)
    if cfg.get("model"):
        model = _load_model(cfg)
        if model.m != ds.m:
            raise DomainError(f"model has {model.m} series, data has {ds.m}")
        model = replace(model, names=ds.names)
    else:
        model, _ = fit_copar(ds.values, cfg["order"], _margins(cfg, ds.m), parse_families(cfg["families"]),
                             refine=cfg["refine"], names=ds.names)
    mode = Mode.parse(cfg["mode"])
    cond = None
    if mode is Mode.CONDITIONAL:
        if not cfg.get("conditioning"):
            raise DomainError("conditional mode needs --conditioning v1,...,vh")
        cond = [float(v) for v in str(cfg["conditioning"]).split(",")]
    req = ForecastRequest(model, ds.values, cfg["horizon"], cfg["samples"], cfg["alpha"], mode, cond,
                          keep_samples=bool(cfg.get("fan")))
    res = forecast(req, seed=cfg["seed"])
    if cfg.get("fan"):
        fan = ["series,horizon,quantile,value"] + [f"{s},{h},{q!r},{v!r}" for s, h, q, v in res.fan_data()]
        Path(cfg["fan"]).write_text("\n".join(fan) + "\n")
    keys = ["data", "model", "order", "families", "margins", "mode", "horizon", "samples", "alpha"]
    return _echo("forecast", cfg, keys) + res.to_table()


def cmd_granger(cfg: dict) -> str:
    ds = _data(cfg)
    if "families" not in cfg.get("_explicit", ()):
        # family search on the between-series blocks inflates the test size;
        # the Gaussian proxy keeps it near nominal unless asked otherwise
        cfg = dict(cfg, families="N")
    fams = parse_families(cfg["families"])
    margins = _margins(cfg, ds.m)
    lines = [_echo("granger", cfg, ["data", "order", "families", "margins"]).rstrip("\n"),
             "direction,statistic,df,p_value,decision"]
    for c in range(ds.m):
        for e in range(ds.m):
            if c == e:
                continue
            r = granger_test(ds.values, cfg["order"], (c, e), fams, margins, names=ds.names)
            d, stat, df, p, dec = r.row()
            lines.append(f"{d},{_fmt(stat)},{df},{_fmt(p)},{dec}")
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg: dict) -> str:
    model = _load_model(cfg)
    X = simulate_copar(model, cfg["n"], cfg["seed"])
    ds = Dataset(model.names, X)
    return _echo("simulate", cfg, ["model", "n"]) + dataset_to_csv(ds)


def evaluate_tables(ds: Dataset, cfg: dict):
    """Rolling one-step evaluation over the test split.

    For an ordered pair A|B the model with pivot A and second series B gives
    the unconditional and joint forecasts of A; the model with pivot B
    gives the conditional forecast of A given B's realized value.  Every
    model is re-estimated sequentially on the data strictly before the
    forecast time.
    """
    T, m = ds.values.shape
    split = cfg["split"]
    if split is None:
        raise DomainError("--split is required for evaluate")
    k = cfg["order"]
    if not 5 * k + 5 <= split < T:
        raise DomainError(f"split must satisfy 5k + 5 <= split < T, got {split}")
    fams = parse_families(cfg["families"])
    margins = _margins(cfg, m)
    pairs = [(a, b) for a in range(m) for b in range(m) if a != b]
    methods = ("uncond", "joint", "var", "cond")
    preds = {(meth, p): [] for meth in methods for p in pairs}
    X = ds.values
    for t in range(split, T):
        train = X[:t]
        fitted = {}
        for a, b in pairs:
            sub = train[:, [a, b]]
            fitted[(a, b)], _ = fit_copar_sequential(sub, k, [margins[a], margins[b]], fams)
        for a, b in pairs:
            mod = fitted[(a, b)]
            hist = train[:, [a, b]]
            for meth, mode in (("uncond", Mode.UNCONDITIONAL), ("joint", Mode.JOINT)):
                r = forecast(ForecastRequest(mod, hist, 1, cfg["samples"], cfg["alpha"], mode, series=(0,)),
                             seed=cfg["seed"])
                preds[(meth, (a, b))].append((r.point[0, 0], r.lower[0, 0], r.upper[0, 0]))
            rev = fitted[(b, a)]
            r = forecast(ForecastRequest(rev, train[:, [b, a]], 1, cfg["samples"], cfg["alpha"],
                                         Mode.CONDITIONAL, [X[t, b]]), seed=cfg["seed"])
            preds[("cond", (a, b))].append((r.point[0, 0], r.lower[0, 0], r.upper[0, 0]))
            vm = fit_var(hist, k)
            vr = var_forecast(vm, hist, 1, cfg["alpha"])
            preds[("var", (a, b))].append((vr.point[0, 0], vr.lower[0, 0], vr.upper[0, 0]))
    actual = {a: X[split:, a] for a in range(m)}
    rm, ms = {}, {}
    for key, vals in preds.items():
        arr = np.array(vals)
        a = key[1][0]
        rm[key] = rmse(arr[:, 0], actual[a])
        ms[key] = mean_interval_score(arr[:, 1], arr[:, 2], actual[a], cfg["alpha"])
    return methods, pairs, rm, ms


def format_metric_table(title: str, ds_names, methods, pairs, values) -> str:
    cols = [f"{ds_names[a]}|{ds_names[b]}" for a, b in pairs]
    lines = [f"# {title}", ",".join(["method"] + cols)]
    for meth in methods:
        lines.append(",".join([meth] + [_fmt(values[(meth, p)]) for p in pairs]))
    return "\n".join(lines) + "\n"


def cmd_evaluate(cfg: dict) -> str:
    ds = _data(cfg)
    methods, pairs, rm, ms = evaluate_tables(ds, cfg)
    head = _echo("evaluate", cfg, ["data", "order", "families", "margins", "split", "samples", "alpha"])
    return (head + format_metric_table("RMSE", ds.names, methods, pairs, rm)
            + format_metric_table(f"MIS alpha={cfg['alpha']}", ds.names, methods, pairs, ms))


COMMANDS = {
    "fit": cmd_fit,
    "order-select": cmd_order_select,
    "forecast": cmd_forecast,
    "granger": cmd_granger,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--data", help="input CSV (header row; optional leading timestamp column)")
    g.add_argument("--config", help="key=value configuration file; flags override it")
    g.add_argument("--order", type=int, help="COPAR order k")
    g.add_argument("--k-max", dest="k_max", type=int, help="largest order tried by order-select")
    g.add_argument("--criterion", choices=["aic", "bic", "hqc"])
    g.add_argument("--families", help="comma separated copula family codes, or 'all'")
    g.add_argument("--margins", help="margin family (norm, snorm, hyp), one or one per series")
    g.add_argument("--samples", type=int, help="Monte Carlo sample paths (default 10000)")
    g.add_argument("--alpha", type=float, help="interval level (default 0.05)")
    g.add_argument("--seed", type=int, help="master seed; path p uses seed + p")
    g.add_argument("--split", type=int, help="first test index for evaluate")
    g.add_argument("--mode", choices=["unconditional", "joint", "conditional"])
    g.add_argument("--out", help="write the primary output here instead of stdout")
    g.add_argument("--model", help="model file (forecast, simulate)")
    g.add_argument("--columns", help="comma separated column names in pivot order")
    g.add_argument("--horizon", type=int, help="forecast horizon h")
    g.add_argument("--conditioning", help="future pivot values for conditional mode")
    g.add_argument("--fan", help="also write fan-chart data (series, horizon, quantile, value)")
    g.add_argument("--n", type=int, help="length of the simulated series")
    g.add_argument("--no-refine", dest="refine", action="store_false", default=None,
                   help="skip joint likelihood refinement after the sequential fit")
    p = argparse.ArgumentParser(prog="copar", description="Copula autoregressive models for multivariate time series.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        cfg = _resolve(args)
        _emit(COMMANDS[args.command](cfg), cfg)
    except (FitError, NumericalError) as exc:
        print(f"copar: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (DomainError, IngestError, CoparError, OSError) as exc:
        print(f"copar: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
