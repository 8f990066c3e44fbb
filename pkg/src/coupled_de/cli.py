"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 threshold outside the search range,
4 invalid ensemble or configuration.  Every failure writes one JSON line
``{"error": kind, "message": ...}`` to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings

from .engines import BOUNDARY_MODES, ENGINE_IDS, DeLimits, history_csv, run_de
from .ensemble import (
    DegenerateRateWarning,
    EnsembleError,
    EnsembleSpec,
    ProtographSpec,
    couple_protograph,
    design_rate,
    ensemble_rate,
    load_config,
)
from .functions import DomainError
from .quantized import QuantParams, oracle_threshold
from .threshold import (
    SearchRange,
    ThresholdRangeError,
    find_threshold,
    rows_to_csv,
    rows_to_json,
    sweep,
)

EXIT_USAGE = 2
EXIT_RANGE = 3
EXIT_CONFIG = 4
CLI_ENGINES = ENGINE_IDS + ("oracle",)
SWEEP_DEFAULTS = {"dv": 3, "dc": 6, "gamma": 3}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}")
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coupled-de", description="Decoding thresholds of coupled LDPC ensembles on the BIAWGN channel.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, chain_list=False):
        sp.add_argument("--config", help="JSON or TOML run configuration")
        sp.add_argument("--dv", type=int)
        sp.add_argument("--dc", type=int)
        sp.add_argument("--gamma", type=int)
        if chain_list:
            sp.add_argument("--chains", type=_csv_list(int), help="comma-separated chain lengths")
        else:
            sp.add_argument("--chain", type=int, help="chain length C_L")
        sp.add_argument("--weights", type=_csv_list(float), help="coupling weights w_0..w_{gamma-1}")
        sp.add_argument("--format", choices=("table", "json", "csv"), default="table")
        sp.add_argument("--output", help="write the report here instead of stdout")

    def search(sp):
        sp.add_argument("--sigma-min", type=float)
        sp.add_argument("--sigma-max", type=float)
        sp.add_argument("--precision", type=float)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--boundary", choices=BOUNDARY_MODES)

    t = sub.add_parser("threshold", help="threshold of one ensemble")
    common(t)
    t.add_argument("--engine", choices=CLI_ENGINES)
    search(t)
    t.add_argument("--delta", type=float, help="oracle LLR step")
    t.add_argument("--lmax", type=float, help="oracle LLR range")

    s = sub.add_parser("sweep", help="thresholds over chain lengths and engines")
    common(s, chain_list=True)
    s.add_argument("--engines", type=_csv_list(str))
    search(s)
    s.add_argument("--jobs", type=int, help="worker processes (default: all processors)")

    pr = sub.add_parser("profile", help="per-position MI across iterations")
    common(pr)
    pr.add_argument("--engine", choices=ENGINE_IDS)
    pr.add_argument("--sigma", type=float)
    pr.add_argument("--dump-every", type=int, help="record the profile every N iterations (0: final only)")
    pr.add_argument("--max-iter", type=int)
    pr.add_argument("--boundary", choices=BOUNDARY_MODES)

    r = sub.add_parser("rate", help="design rate")
    common(r)

    o = sub.add_parser("oracle", help="quantized-DE threshold of an uncoupled ensemble")
    common(o)
    search(o)
    o.add_argument("--delta", type=float)
    o.add_argument("--lmax", type=float)
    return p


# ---------------------------------------------------------------------------
# configuration merging
# ---------------------------------------------------------------------------

CONFIG_KEYS = {"dv", "dc", "gamma", "chain", "chain_len", "chains", "weights", "engine", "engines", "sigma",
               "dump_every", "boundary", "search", "limits", "quant", "protograph", "jobs", "format"}


def _merge(args) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError:
            raise CliError(EXIT_CONFIG, "config", f"config file not found: {args.config}")
        except Exception as exc:  # parser errors differ between JSON and TOML
            raise CliError(EXIT_CONFIG, "config", f"cannot parse config: {exc}")
        if not isinstance(cfg, dict):
            raise CliError(EXIT_CONFIG, "config", "config must be a table/object")
        unknown = set(cfg) - CONFIG_KEYS - {"base", "spread", "punctured", "command"}
        if unknown:
            raise CliError(EXIT_CONFIG, "config", f"unknown config keys: {sorted(unknown)}")
        if "base" in cfg:
            cfg = {"protograph": {k: cfg[k] for k in ("base", "spread", "punctured") if k in cfg},
                   **{k: v for k, v in cfg.items() if k not in ("base", "spread", "punctured")}}
        if "chain_len" in cfg:
            cfg.setdefault("chain", cfg.pop("chain_len"))
    inline = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    in_cfg = {"dv", "dc", "protograph"} & set(cfg)
    if in_cfg and ({"dv", "dc"} & set(inline)):
        raise CliError(EXIT_USAGE, "usage", "ensemble given both inline and in the config file")
    merged = {**cfg, **inline}
    for key, sect in (("sigma_min", "search"), ("sigma_max", "search"), ("precision", "search"),
                      ("max_iter", "limits"), ("delta", "quant"), ("lmax", "quant")):
        if key in inline:
            merged.setdefault(sect, {})
            merged[sect] = {**merged[sect], key: inline[key]}
            merged.pop(key)
    return merged


def _search(cfg) -> SearchRange:
    try:
        return SearchRange(**cfg.get("search", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "config", f"invalid search range: {exc}")


def _limits(cfg) -> DeLimits:
    try:
        return DeLimits(**cfg.get("limits", {}))
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, "config", f"invalid limits: {exc}")


def _protograph(cfg):
    if "protograph" not in cfg:
        return None
    try:
        return ProtographSpec.from_dict(cfg["protograph"])
    except (EnsembleError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, "config", f"invalid protograph: {exc}")


def _ensemble(cfg, chain=None, defaults=None) -> EnsembleSpec:
    vals = {**(defaults or {}), **cfg}
    for key in ("dv", "dc"):
        if key not in vals:
            raise CliError(EXIT_USAGE, "usage", f"missing --{key}")
    weights = vals.get("weights")
    gamma = vals.get("gamma", len(weights) if weights else 1)
    try:
        return EnsembleSpec(int(vals["dv"]), int(vals["dc"]), int(gamma),
                            int(chain if chain is not None else vals.get("chain", 1)),
                            tuple(weights) if weights else None)
    except (EnsembleError, ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc))


def _target(cfg, engine, chain=None, defaults=None):
    proto = _protograph(cfg)
    n = chain if chain is not None else cfg.get("chain", 1)
    if proto is not None:
        if engine != "ga-proto-avg":
            raise CliError(EXIT_CONFIG, "config", f"protograph configs need engine ga-proto-avg, not {engine}")
        try:
            return couple_protograph(proto, int(n))
        except (EnsembleError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, "config", str(exc))
    return _ensemble(cfg, chain, defaults)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [["" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))
                                        for v in r] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    return "".join("  ".join(c[i].rjust(widths[i]) for i in range(len(c))).rstrip() + "\n" for c in cells)


def _emit(text: str, cfg) -> None:
    path = cfg.get("output")
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _records_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def _report(d: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(d, indent=2) + "\n"
    flat = {k: (json.dumps(v) if isinstance(v, (dict, list)) else v) for k, v in d.items()}
    if fmt == "csv":
        return _records_csv(list(flat), [list(flat.values())])
    return "".join(f"{k:<17} {v}\n" for k, v in flat.items())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _oracle(cfg) -> dict:
    spec = _ensemble(cfg)
    if spec.gamma != 1 or spec.chain_len != 1:
        raise CliError(EXIT_CONFIG, "config", "the oracle handles uncoupled ensembles only (gamma = 1, chain 1)")
    qd = cfg.get("quant", {})
    try:
        q = QuantParams(delta=qd.get("delta", 0.005), l_max=qd.get("lmax", qd.get("l_max", 30.0)))
        q.n_half
        return oracle_threshold(spec.dv, spec.dc, _search(cfg), q).to_dict()
    except EnsembleError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc))
    except ValueError as exc:
        if isinstance(exc, ThresholdRangeError):
            raise
        raise CliError(EXIT_CONFIG, "config", str(exc))


def cmd_threshold(cfg) -> int:
    engine = cfg.get("engine", "ga-avg")
    if engine not in CLI_ENGINES:
        raise CliError(EXIT_CONFIG, "config", f"unknown engine {engine!r}")
    if engine == "oracle":
        res = _oracle(cfg)
    else:
        target = _target(cfg, engine)
        try:
            res = find_threshold(engine, target, _search(cfg), _limits(cfg),
                                 boundary=cfg.get("boundary", "ideal")).to_dict()
        except EnsembleError as exc:
            raise CliError(EXIT_CONFIG, "config", str(exc))
    _emit(_report(res, cfg["format"]), cfg)
    return 0


def cmd_oracle(cfg) -> int:
    _emit(_report(_oracle(cfg), cfg["format"]), cfg)
    return 0


def cmd_sweep(cfg) -> int:
    engines = cfg.get("engines") or ["rca-avg", "ga-avg"]
    bad = [e for e in engines if e not in ENGINE_IDS]
    if bad:
        raise CliError(EXIT_CONFIG, "config", f"unknown engines {bad}")
    chains = cfg.get("chains") or [cfg.get("chain", 10)]
    proto = _protograph(cfg)
    if proto is not None:
        if set(engines) - {"ga-proto-avg"}:
            raise CliError(EXIT_CONFIG, "config", "protograph sweeps support engine ga-proto-avg only")
        try:
            targets = [couple_protograph(proto, int(n)) for n in chains]
        except (EnsembleError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, "config", str(exc))
    else:
        targets = [_ensemble(cfg, n, SWEEP_DEFAULTS) for n in chains]
    rows = sweep(engines, targets, _search(cfg), _limits(cfg), jobs=cfg.get("jobs"),
                 boundary=cfg.get("boundary", "ideal"))
    fmt = cfg["format"]
    if fmt == "json":
        text = rows_to_json(rows)
    elif fmt == "csv":
        text = rows_to_csv(rows)
    else:
        recs = [r.as_record() for r in rows]
        cols = list(recs[0]) if recs else ["engine"]
        text = _table(cols, [[rec[c] for c in cols] for rec in recs])
    _emit(text, cfg)
    if rows and all(r.error for r in rows):
        msg = rows[0].error
        raise CliError(EXIT_RANGE if "search range" in msg else EXIT_CONFIG, "sweep", f"every cell failed: {msg}")
    return 0


def cmd_profile(cfg) -> int:
    engine = cfg.get("engine", "ga-avg")
    if "sigma" not in cfg:
        raise CliError(EXIT_USAGE, "usage", "missing --sigma")
    sigma = float(cfg["sigma"])
    target = _target(cfg, engine)
    try:
        out = run_de(engine, target, sigma, _limits(cfg), boundary=cfg.get("boundary", "ideal"),
                     dump_every=int(cfg.get("dump_every", 0)))
    except DomainError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc))
    except EnsembleError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc))
    hist = out.history or [(out.iterations, out.position_profile)]
    rows = [[it, i + 1, float(v)] for it, prof in hist for i, v in enumerate(prof)]
    header = ["iteration", "position", "mutual_information"]
    fmt = cfg["format"]
    if fmt == "csv":
        text = history_csv(hist)
    elif fmt == "json":
        text = json.dumps({"status": out.status, "iterations": out.iterations,
                           "rows": [dict(zip(header, r)) for r in rows]}, indent=2) + "\n"
    else:
        text = _table(header, rows)
    _emit(text, cfg)
    return 0


def cmd_rate(cfg) -> int:
    proto = _protograph(cfg)
    if proto is not None:
        try:
            rate = couple_protograph(proto, int(cfg.get("chain", 1))).rate()
        except (EnsembleError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, "config", str(exc))
        summary = {"chain_len": int(cfg.get("chain", 1))}
    else:
        spec = _ensemble(cfg)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateRateWarning)
            try:
                rate = design_rate(spec) if spec.uniform else ensemble_rate(spec)
            except EnsembleError as exc:
                raise CliError(EXIT_CONFIG, "config", str(exc))
        for w in caught:
            if issubclass(w.category, DegenerateRateWarning):
                sys.stderr.write(json.dumps({"warning": "degenerate-rate", "message": str(w.message)}) + "\n")
        summary = spec.summary()
    _emit(_report({**summary, "rate": rate}, cfg["format"]), cfg)
    return 0


COMMANDS = {"threshold": cmd_threshold, "sweep": cmd_sweep, "profile": cmd_profile, "rate": cmd_rate,
            "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise CliError(EXIT_USAGE, "usage", "missing command; expected one of " + ", ".join(COMMANDS))
        cfg = _merge(args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": exc.message}) + "\n")
        return exc.code
    except ThresholdRangeError as exc:
        sys.stderr.write(json.dumps({"error": "search-range", "message": str(exc)}) + "\n")
        return EXIT_RANGE


if __name__ == "__main__":
    sys.exit(main())
