"""Information-theoretic scalar maps for BIAWGN density evolution.

All maps are evaluated through memoized tables built once per process.
Every table stores ``log(tail(u))`` on a log-spaced grid, where the tail is
``1 - I(u)`` for the mutual-information maps (``cf`` and ``j_fun``) and
``phi(u)`` itself for ``phi``.  Working in the log-tail domain keeps full
relative precision near saturation, which the reciprocal and averaging
operations of the engines depend on.

``PERFECT`` (``math.inf``) is the perfect-knowledge message: every mutual
information map sends it to 1, ``phi`` sends it to 0.
"""
from __future__ import annotations

import functools
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import PchipInterpolator

logger = logging.getLogger(__name__)

PERFECT = math.inf

#: Messages whose mutual information exceeds ``1 - MI_PROMOTION`` are
#: promoted to PERFECT by the DE engines.
MI_PROMOTION = 1e-9

U_MIN = 1e-6
U_MAX = 100.0
N_KNOTS = 4096
TABLE_ACCURACY = 1e-8

TABLE_DIR_ENV = "COUPLED_DE_TABLE_DIR"
_CACHE_VERSION = 1
_LN2 = math.log(2.0)


class DomainError(ValueError):
    """Argument outside the domain of a scalar map."""


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _log2_1p_exp_neg(f):
    return np.logaddexp(0.0, -f) / _LN2


def _one_minus_tanh_half(f):
    # 1 - tanh(f/2) = 2 / (1 + e^f), overflow-safe
    return 2.0 * np.exp(-np.logaddexp(0.0, f))


_INTEGRANDS = {"j": _log2_1p_exp_neg, "phi": _one_minus_tanh_half}


def gaussian_llr_expectation(kind: str, means, panels: int = 100, order: int = 16) -> np.ndarray:
    """E[g(L)] for a consistent Gaussian LLR ``L ~ N(m, 2m)``, vectorized over ``m``.

    ``kind`` selects ``g``: ``"j"`` for ``log2(1 + e^-L)`` (so the result is
    ``1 - J(m)``) and ``"phi"`` for ``1 - tanh(L/2)`` (the result is
    ``phi(m)``).  The integral runs over ``m +- 10 sqrt(2m)`` with composite
    Gauss-Legendre rules, accurate to about 1e-15 absolute on [1e-6, 100].
    """
    g = _INTEGRANDS[kind]
    nodes, wts = leggauss(order)
    edges = np.linspace(-10.0, 10.0, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    t = ((b - a) / 2 * nodes + (a + b) / 2).ravel()
    w = ((b - a) / 2 * wts).ravel() * np.exp(-t * t / 2) / math.sqrt(2 * math.pi)
    means = np.atleast_1d(np.asarray(means, dtype=float))
    out = np.empty_like(means)
    for start in range(0, means.size, 256):
        m = means[start:start + 256, None]
        out[start:start + 256] = (g(m + np.sqrt(2 * m) * t) * w).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FnTable:
    """Monotone tabulation of one scalar map.

    ``grid`` holds the abscissae and ``values`` the function samples.
    Between knots the log-tail is interpolated with a monotone cubic
    (PCHIP) in ``log u``; below ``grid[0]`` the tail is linear towards its
    value at zero, above ``grid[-1]`` inputs are clamped.
    """

    name: str
    grid: np.ndarray
    log_tail: np.ndarray
    mi_type: bool
    accuracy: float = TABLE_ACCURACY
    _t: np.ndarray = field(init=False, repr=False)
    _c: np.ndarray = field(init=False, repr=False)
    _rev_log_tail: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.log(self.grid)
        pp = PchipInterpolator(t, self.log_tail)
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_c", np.ascontiguousarray(pp.c))
        object.__setattr__(self, "_rev_log_tail", self.log_tail[::-1].copy())

    @property
    def values(self) -> np.ndarray:
        tail = np.exp(self.log_tail)
        return 1.0 - tail if self.mi_type else tail

    @property
    def tail_min(self) -> float:
        """Tail at the upper end of the grid (smallest representable tail)."""
        return float(np.exp(self.log_tail[-1]))

    # -- forward -----------------------------------------------------------

    def _eval_log_tail(self, t: np.ndarray) -> np.ndarray:
        k = np.clip(np.searchsorted(self._t, t, side="right") - 1, 0, self._t.size - 2)
        dt = t - self._t[k]
        c = self._c
        return ((c[0, k] * dt + c[1, k]) * dt + c[2, k]) * dt + c[3, k]

    def value_and_tail(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Function value and tail, each computed without cancellation."""
        u = _check_nonneg(u)
        value = np.empty_like(u)
        tail = np.empty_like(u)
        inf = np.isinf(u)
        low = u < self.grid[0]
        mid = ~(inf | low)
        tail[inf] = 0.0
        head = -math.expm1(self.log_tail[0])
        drop = head * (u[low] / self.grid[0])
        tail[low] = 1.0 - drop
        lt = self._eval_log_tail(np.log(np.minimum(u[mid], self.grid[-1])))
        tail[mid] = np.exp(lt)
        if self.mi_type:
            value[inf] = 1.0
            value[low] = drop
            value[mid] = -np.expm1(lt)
        else:
            value[:] = tail
        return value, tail

    def tail(self, u) -> np.ndarray:
        """``1 - I(u)`` for MI tables, ``phi(u)`` for the phi table."""
        return self.value_and_tail(u)[1]

    def value(self, u) -> np.ndarray:
        return self.value_and_tail(u)[0]

    # -- inverse -----------------------------------------------------------

    def inverse_log_tail(self, target) -> np.ndarray:
        """Abscissa whose log-tail equals ``target`` (<= 0).

        Targets below the tail at the grid maximum map to PERFECT.
        """
        target = np.asarray(target, dtype=float)
        out = np.empty_like(target)
        lt = self.log_tail
        perfect = target < lt[-1]
        low = target > lt[0]
        mid = ~(perfect | low)
        out[perfect] = PERFECT
        head = -math.expm1(lt[0])
        # linear tail region: 1 - tail = head * u / u0
        out[low] = -np.expm1(target[low]) / head * self.grid[0]
        if np.any(mid):
            out[mid] = np.exp(self._solve_segment(target[mid]))
        return out

    def _solve_segment(self, y: np.ndarray) -> np.ndarray:
        n = self._t.size
        # log_tail is decreasing; search in the reversed copy
        j = np.searchsorted(self._rev_log_tail, y, side="left")
        k = np.clip(n - 1 - j, 0, n - 2)
        c0, c1, c2, c3 = self._c[:, k]
        h = self._t[k + 1] - self._t[k]
        y0, y1 = self.log_tail[k], self.log_tail[k + 1]
        lo = np.zeros_like(y)
        hi = h.copy()
        tau = np.clip((y - y0) / (y1 - y0) * h, lo, hi)
        tol = 4e-16 * (1.0 + np.abs(self._t[k]))
        # plain Newton usually converges in 2-3 steps from the secant guess
        t_fast = tau
        for _ in range(6):
            f = ((c0 * t_fast + c1) * t_fast + c2) * t_fast + c3 - y
            d = (3 * c0 * t_fast + 2 * c1) * t_fast + c2
            with np.errstate(divide="ignore", invalid="ignore"):
                new = t_fast - f / d
            if not np.all((new >= lo) & (new <= hi)):
                break
            done = np.all(np.abs(new - t_fast) <= tol)
            t_fast = new
            if done:
                return self._t[k] + t_fast
        # safeguarded Newton on the (monotone) cubic piece
        for _ in range(60):
            f = ((c0 * tau + c1) * tau + c2) * tau + c3 - y
            lo = np.where(f > 0, tau, lo)
            hi = np.where(f <= 0, tau, hi)
            d = (3 * c0 * tau + 2 * c1) * tau + c2
            with np.errstate(divide="ignore", invalid="ignore"):
                new = tau - f / d
            bad = ~((new >= lo) & (new <= hi) & np.isfinite(new))
            new = np.where(bad, 0.5 * (lo + hi), new)
            done = np.abs(new - tau) <= tol
            tau = new
            if np.all(done):
                break
        return self._t[k] + tau

    def inverse(self, v) -> np.ndarray:
        """Abscissa with function value ``v``."""
        v = np.asarray(v, dtype=float)
        if self.mi_type:
            with np.errstate(divide="ignore"):
                target = np.log1p(-v)
        else:
            with np.errstate(divide="ignore"):
                target = np.log(v)
        out = self.inverse_log_tail(target)
        out[v == (0.0 if self.mi_type else 1.0)] = 0.0
        return out

    def inverse_tail(self, c) -> np.ndarray:
        """Abscissa with tail ``c`` (``1 - I`` or ``phi``)."""
        c = np.asarray(c, dtype=float)
        with np.errstate(divide="ignore"):
            out = self.inverse_log_tail(np.log(c))
        out[c == 1.0] = 0.0
        return out

    def solve(self, value, tail) -> np.ndarray:
        """Invert from whichever of ``value``/``tail`` carries more precision.

        The caller supplies both the target function value and its
        complement, each computed directly (not as ``1 - other``).
        """
        value = np.asarray(value, dtype=float)
        tail = np.asarray(tail, dtype=float)
        use_value = value < tail
        out = np.empty(np.broadcast(value, tail).shape)
        if np.any(use_value):
            out[use_value] = self.inverse(value[use_value])
        if np.any(~use_value):
            out[~use_value] = self.inverse_tail(tail[~use_value])
        return out

    def to_csv(self, path) -> None:
        """Write ``abscissa,value`` rows."""
        data = np.column_stack([self.grid, self.values])
        np.savetxt(path, data, delimiter=",", header="abscissa,value", comments="", fmt="%.17g")


def _check_nonneg(u) -> np.ndarray:
    u = np.array(u, dtype=float, ndmin=1)
    if np.any(np.isnan(u)) or np.any(u < 0):
        raise DomainError("argument must be non-negative (or PERFECT)")
    return u


def _check_unit(v) -> np.ndarray:
    v = np.array(v, dtype=float, ndmin=1)
    if np.any(np.isnan(v)) or np.any((v < 0) | (v > 1)):
        raise DomainError("argument must lie in [0, 1]")
    return v


def _build_log_tail(name: str, grid: np.ndarray) -> np.ndarray:
    if name == "cf":
        tail = gaussian_llr_expectation("j", 2.0 * grid)
    elif name == "j":
        tail = gaussian_llr_expectation("j", grid)
    else:
        tail = gaussian_llr_expectation("phi", grid)
    return np.log(tail)


def _cache_path(name: str) -> Path | None:
    root = os.environ.get(TABLE_DIR_ENV)
    if not root:
        return None
    key = f"{name}-{N_KNOTS}-{U_MIN:g}-{U_MAX:g}-v{_CACHE_VERSION}"
    digest = hashlib.sha1(key.encode()).hexdigest()[:10]
    return Path(root) / f"{name}-{digest}.npz"


@functools.lru_cache(maxsize=None)
def get_table(name: str) -> FnTable:
    """Return the process-wide table for ``"cf"``, ``"j"`` or ``"phi"``."""
    if name not in ("cf", "j", "phi"):
        raise KeyError(name)
    grid = np.geomspace(U_MIN, U_MAX, N_KNOTS)
    cache = _cache_path(name)
    log_tail = None
    if cache is not None and cache.exists():
        try:
            with np.load(cache) as data:
                if np.array_equal(data["grid"], grid):
                    log_tail = data["log_tail"]
        except (OSError, KeyError, ValueError):
            logger.warning("ignoring unreadable table cache %s", cache)
    if log_tail is None:
        log_tail = _build_log_tail(name, grid)
        if cache is not None:
            try:
                cache.parent.mkdir(parents=True, exist_ok=True)
                np.savez(cache, grid=grid, log_tail=log_tail)
            except OSError:
                logger.warning("could not write table cache %s", cache)
    if not np.all(np.diff(log_tail) < 0):
        raise RuntimeError(f"table {name!r} is not strictly monotone")
    return FnTable(name, grid, log_tail, mi_type=(name != "phi"))


# ---------------------------------------------------------------------------
# public maps
# ---------------------------------------------------------------------------

def _ret(x: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(x[0])
    return x.reshape(np.shape(like))


def cf(snr):
    """Mutual information of a BIAWGN channel with SNR ``snr`` (LLR mean ``2 snr``)."""
    return _ret(get_table("cf").value(snr), snr)


def cf_inv(mi):
    """SNR whose BIAWGN mutual information is ``mi``; ``cf_inv(1)`` is PERFECT."""
    v = _check_unit(mi)
    return _ret(get_table("cf").inverse(v), mi)


def reciprocal_snr(z):
    """Reciprocal-channel SNR ``r`` with ``cf(z) + cf(r) = 1``.

    Never forms ``1 - cf(z)`` explicitly, so both ends stay accurate.
    """
    tab = get_table("cf")
    value, tail = tab.value_and_tail(z)
    # cf(r) = tail(z) and 1 - cf(r) = cf(z)
    return _ret(tab.solve(tail, value), z)


def phi(u):
    """Chung's check-node function ``1 - E[tanh(L/2)]`` for ``L ~ N(u, 2u)``."""
    return _ret(get_table("phi").value(u), u)


def phi_inv(v):
    """Inverse of ``phi``; ``phi_inv(0)`` is PERFECT and ``phi_inv(1) = 0``."""
    vv = _check_unit(v)
    return _ret(get_table("phi").inverse(vv), v)


def j_fun(u):
    """Mutual information between a code bit and a consistent Gaussian LLR of mean ``u``."""
    return _ret(get_table("j").value(u), u)


def j_inv(mi):
    """LLR mean whose ``j_fun`` is ``mi``; ``j_inv(1)`` is PERFECT."""
    v = _check_unit(mi)
    return _ret(get_table("j").inverse(v), mi)
