"""Bisection search for the decoding threshold and multi-ensemble sweeps."""
from __future__ import annotations

import csv
import io
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .engines import DeLimits, run_de
from .ensemble import (
    CoupledLayout,
    DegenerateRateWarning,
    EnsembleError,
    EnsembleSpec,
    design_rate,
    ensemble_rate,
)

SWEEP_COLUMNS = ("dv", "dc", "gamma", "chain_len", "engine", "rate", "sigma_star", "bracket_lo", "bracket_hi",
                 "iterations", "error")


class ThresholdRangeError(RuntimeError):
    """The threshold lies outside the search interval."""


@dataclass(frozen=True)
class SearchRange:
    sigma_min: float = 0.4
    sigma_max: float = 1.6
    precision: float = 1e-4

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("search range needs 0 < sigma_min < sigma_max")
        if not self.precision > 0:
            raise ValueError("precision must be positive")


@dataclass(frozen=True)
class ThresholdResult:
    sigma_star: float
    bracket: tuple[float, float]
    precision: float
    engine: str
    spec: dict
    design_rate: float
    iterations_at_lo: int

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "spec": self.spec,
            "rate": self.design_rate,
            "sigma_star": self.sigma_star,
            "bracket": list(self.bracket),
            "precision": self.precision,
            "iterations_at_lo": self.iterations_at_lo,
        }


def bisect_threshold(converges: Callable[[float], tuple[bool, int]], search: SearchRange) -> tuple[float, float, int]:
    """Bisection on a monotone convergence test; returns ``(lo, hi, iterations at lo)``."""
    ok_hi, _ = converges(search.sigma_max)
    if ok_hi:
        raise ThresholdRangeError("threshold above search range")
    ok_lo, it_lo = converges(search.sigma_min)
    if not ok_lo:
        raise ThresholdRangeError("threshold below search range")
    lo, hi = search.sigma_min, search.sigma_max
    while hi - lo > search.precision:
        mid = 0.5 * (lo + hi)
        ok, it = converges(mid)
        if ok:
            lo, it_lo = mid, it
        else:
            hi = mid
    return lo, hi, it_lo


def target_rate(target) -> float:
    if isinstance(target, CoupledLayout):
        return target.rate()
    if target.uniform:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateRateWarning)
            return design_rate(target)
    return ensemble_rate(target)


def target_summary(target) -> dict:
    if isinstance(target, CoupledLayout):
        return {"protograph": target.proto.to_dict(), "chain_len": target.chain_len, "gamma": target.gamma}
    return target.summary()


def find_threshold(engine: str, target, search: SearchRange = SearchRange(), limits: DeLimits = DeLimits(), *,
                   boundary: str = "ideal") -> ThresholdResult:
    """Largest converging sigma (to ``search.precision``) for one engine and ensemble."""

    def converges(sigma):
        out = run_de(engine, target, sigma, limits, boundary=boundary)
        return out.converged, out.iterations

    lo, hi, it = bisect_threshold(converges, search)
    return ThresholdResult(lo, (lo, hi), search.precision, engine, target_summary(target), target_rate(target), it)


@dataclass
class SweepRow:
    target: object
    engine: str
    result: ThresholdResult | None = None
    error: str | None = None
    rate: float | None = field(default=None)

    def as_record(self) -> dict:
        t = self.target
        if isinstance(t, CoupledLayout):
            dv = dc = ""
            gamma, chain = t.gamma, t.chain_len
        else:
            dv, dc, gamma, chain = t.dv, t.dc, t.gamma, t.chain_len
        r = self.result
        return {
            "dv": dv, "dc": dc, "gamma": gamma, "chain_len": chain, "engine": self.engine,
            "rate": self.rate,
            "sigma_star": r.sigma_star if r else None,
            "bracket_lo": r.bracket[0] if r else None,
            "bracket_hi": r.bracket[1] if r else None,
            "iterations": r.iterations_at_lo if r else None,
            "error": self.error,
        }


def _sweep_cell(args) -> SweepRow:
    target, engine, search, limits, boundary = args
    try:
        rate = target_rate(target)
    except EnsembleError:
        rate = None
    try:
        res = find_threshold(engine, target, search, limits, boundary=boundary)
        return SweepRow(target, engine, res, None, rate)
    except (ThresholdRangeError, EnsembleError, ValueError) as exc:
        return SweepRow(target, engine, None, str(exc), rate)


def sweep(engines: Sequence[str], targets: Iterable, search: SearchRange = SearchRange(),
          limits: DeLimits = DeLimits(), *, jobs: int | None = 1, boundary: str = "ideal") -> list[SweepRow]:
    """Thresholds for every (ensemble, engine) pair, ensemble-major order.

    Failures are stored in the row's ``error`` field.  ``jobs > 1`` runs
    cells in worker processes; ``None`` uses every available processor.
    """
    cells = [(t, e, search, limits, boundary) for t in targets for e in engines]
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(cells) <= 1:
        return [_sweep_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
        return list(pool.map(_sweep_cell, cells))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        rec = row.as_record()
        w.writerow([_fmt(rec[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def rows_to_json(rows: Sequence[SweepRow]) -> str:
    return json.dumps({"rows": [r.as_record() for r in rows]}, indent=2) + "\n"
