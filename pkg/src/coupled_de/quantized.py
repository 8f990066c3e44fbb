"""Quantized density evolution for uncoupled regular ensembles.

Densities live on the LLR grid ``n * delta`` for ``|n| <= N`` plus two
mass points at ``-inf`` and ``+inf``, stored as one array
``[-inf, -N, ..., N, +inf]``.  Variable updates are FFT convolutions;
sums leaving ``[-L_max, L_max]`` fold into the infinite bins.  Check
updates work on ``g = -ln tanh(|L|/2)`` where box-plus becomes addition:
the signed g-densities are raised to the ``d_c - 1`` convolution power
through an FFT (``method="fft"``).  ``method="pairwise"`` instead folds an
exact two-input quantized box-plus table, which is only practical on
coarse grids.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.special import ndtr

from .ensemble import EnsembleError
from .threshold import SearchRange, ThresholdResult, bisect_threshold


@dataclass(frozen=True)
class QuantParams:
    delta: float = 0.005
    l_max: float = 30.0
    # g-domain step as a fraction of delta (check updates only)
    g_ratio: float = 1 / 10

    @property
    def n_half(self) -> int:
        n = round(self.l_max / self.delta)
        if n < 1 or abs(n * self.delta - self.l_max) > 1e-9 * self.l_max:
            raise ValueError("l_max must be a positive multiple of delta")
        return n

    @property
    def g_step(self) -> float:
        return self.delta * self.g_ratio


@dataclass(frozen=True)
class QuantLimits:
    max_iter: int = 3000
    eps_conv: float = 1e-7
    eps_stall: float = 1e-10
    stall_window: int = 50


@dataclass(frozen=True, eq=False)
class QuantizedDensity:
    mass: np.ndarray
    delta: float
    n_half: int

    def __post_init__(self):
        if self.mass.shape != (2 * self.n_half + 3,):
            raise ValueError("mass length does not match the grid")

    @property
    def l_max(self) -> float:
        return self.n_half * self.delta

    @property
    def finite(self) -> np.ndarray:
        return self.mass[1:-1]

    @property
    def p_neg_inf(self) -> float:
        return float(self.mass[0])

    @property
    def p_pos_inf(self) -> float:
        return float(self.mass[-1])

    def llr(self) -> np.ndarray:
        """LLR of every finite bin."""
        return self.delta * np.arange(-self.n_half, self.n_half + 1)

    def total(self) -> float:
        return float(self.mass.sum())

    def mean(self) -> float:
        """Mean over the finite bins (infinite mass must be negligible)."""
        f = self.finite
        return float(f @ self.llr() / f.sum())

    def variance(self) -> float:
        f = self.finite
        ll = self.llr()
        mu = f @ ll / f.sum()
        return float(f @ (ll - mu) ** 2 / f.sum())

    def error_probability(self) -> float:
        n = self.n_half
        return float(self.mass[0] + self.mass[1:n + 1].sum() + 0.5 * self.mass[n + 1])

    def mutual_information(self) -> float:
        """``1 - E[h2(1/(1+e^|L|))]``; exact for symmetric densities."""
        a = np.abs(self.llr())
        p = 1.0 / (1.0 + np.exp(a))
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
        h = np.nan_to_num(h)
        return float(self.total() - self.finite @ h)

    def consistency_gap(self) -> float:
        """|P_e - E[1/(1+e^|L|)]|; zero for a symmetric density."""
        p = 1.0 / (1.0 + np.exp(np.abs(self.llr())))
        return abs(self.error_probability() - float(self.finite @ p))

    def to_csv(self, path) -> None:
        ll = np.concatenate([[-math.inf], self.llr(), [math.inf]])
        with open(path, "w") as fh:
            fh.write("llr,mass\n")
            for x, m in zip(ll, self.mass):
                fh.write(f"{float(x)!r},{float(m)!r}\n")


def _density(mass: np.ndarray, q: QuantParams) -> QuantizedDensity:
    np.clip(mass, 0.0, None, out=mass)
    return QuantizedDensity(mass, q.delta, q.n_half)


def point_mass(llr: float, q: QuantParams = QuantParams()) -> QuantizedDensity:
    """Unit mass at ``llr`` (rounded to the grid) or at an infinite bin."""
    n = q.n_half
    mass = np.zeros(2 * n + 3)
    if llr == math.inf:
        mass[-1] = 1.0
    elif llr == -math.inf:
        mass[0] = 1.0
    else:
        k = int(round(llr / q.delta))
        if abs(k) > n:
            raise ValueError("finite llr outside the grid")
        mass[k + n + 1] = 1.0
    return QuantizedDensity(mass, q.delta, n)


def channel_density(sigma: float, q: QuantParams = QuantParams()) -> QuantizedDensity:
    """Channel LLR ``N(2/sigma^2, 4/sigma^2)`` binned to the nearest grid point."""
    if not sigma > 0:
        raise ValueError("sigma_n must be positive")
    n = q.n_half
    mu, s = 2.0 / sigma ** 2, 2.0 / sigma
    edges = (np.arange(-n, n + 2) - 0.5) * q.delta
    # upper tail via the mirrored cdf keeps precision when mu is large
    cdf = ndtr((edges - mu) / s)
    sf = ndtr((mu - edges) / s)
    mass = np.empty(2 * n + 3)
    mass[0] = cdf[0]
    mass[-1] = sf[-1]
    mass[1:-1] = np.where(edges[:-1] < mu, cdf[1:] - cdf[:-1], sf[:-1] - sf[1:])
    return _density(mass, q)


def _check_grid(*dens: QuantizedDensity) -> QuantParams:
    d0 = dens[0]
    for d in dens[1:]:
        if d.n_half != d0.n_half or d.delta != d0.delta:
            raise ValueError("densities live on different grids")
    return QuantParams(d0.delta, d0.l_max)


def _combine_inf(parts):
    """Mass bookkeeping for a sum of independent terms with +-inf atoms.

    ``parts``: list of (P(-inf), P(+inf), finite mass, multiplicity).
    """
    fin = 1.0
    no_neg = 1.0
    no_pos = 1.0
    for pn, pp, pf, k in parts:
        fin *= pf ** k
        no_neg *= (1.0 - pn) ** k
        no_pos *= (1.0 - pp) ** k
    pos = no_neg - fin
    neg = no_pos - fin
    both = max(1.0 - no_neg - no_pos + fin, 0.0)
    return max(neg, 0.0), max(pos, 0.0), both


def vn_update(channel: QuantizedDensity, incoming: QuantizedDensity, dv: int) -> QuantizedDensity:
    """Channel plus ``dv - 1`` independent copies of ``incoming``.

    A term at ``+inf`` makes the sum ``+inf`` unless a ``-inf`` term is
    also present, in which case the message is taken as an erasure.
    """
    q = _check_grid(channel, incoming)
    n = q.n_half
    k = dv - 1
    cf, af = channel.finite, incoming.finite
    span = 2 * n
    size = sfft.next_fast_len((k + 1) * span + 1, real=True)
    spec = sfft.rfft(cf, size) * sfft.rfft(af, size) ** k
    full = sfft.irfft(spec, size)[: (k + 1) * span + 1]
    centre = (k + 1) * n  # index of LLR 0
    lo, hi = centre - n, centre + n
    neg, pos, both = _combine_inf(
        [(channel.p_neg_inf, channel.p_pos_inf, cf.sum(), 1),
         (incoming.p_neg_inf, incoming.p_pos_inf, af.sum(), k)])
    full = np.clip(full, 0.0, None)
    # FFT round-off: restore the exact finite total
    got = full.sum()
    if got > 0:
        full *= cf.sum() * af.sum() ** k / got
    mass = np.empty(2 * n + 3)
    mass[1:-1] = full[lo:hi + 1]
    mass[0] = neg + full[:lo].sum()
    mass[-1] = pos + full[hi + 1:].sum()
    mass[n + 1] += both
    return _density(mass, q)


@functools.lru_cache(maxsize=8)
def _g_maps(delta: float, n_half: int, g_step: float):
    llr = delta * np.arange(1, n_half + 1)
    g_in = -np.log(np.tanh(llr / 2))
    idx_in = np.rint(g_in / g_step).astype(np.intp)
    g_cut = -math.log(math.tanh(delta / 4))
    k_out = int(g_cut / g_step)
    gk = g_step * np.arange(k_out + 1, dtype=float)
    gk[0] = g_step / 4
    with np.errstate(divide="ignore"):
        l_out = -np.log(np.tanh(gk / 2))
    n_out = np.minimum(np.rint(l_out / delta), n_half).astype(np.intp)
    return idx_in, int(idx_in.max()), k_out, n_out


def _cn_fft(incoming: QuantizedDensity, k: int, q: QuantParams) -> np.ndarray:
    n = q.n_half
    idx_in, k_in, k_out, n_out = _g_maps(q.delta, n, q.g_step)
    m = incoming.mass
    pos = np.bincount(idx_in, m[n + 2:-1], minlength=k_in + 1)
    neg = np.bincount(idx_in, m[n:0:-1], minlength=k_in + 1)
    s0 = incoming.p_pos_inf + incoming.p_neg_inf
    d0 = incoming.p_pos_inf - incoming.p_neg_inf
    size = sfft.next_fast_len(k * k_in + 1, real=True)

    def power(v, atom):
        spec = sfft.rfft(v, size) + atom
        out = sfft.irfft(spec ** k, size)[: k_out + 1]
        out[0] -= atom ** k
        return out

    s_out = power(pos + neg, s0)
    d_out = power(pos - neg, d0)
    plus = np.clip(0.5 * (s_out + d_out), 0.0, None)
    minus = np.clip(0.5 * (s_out - d_out), 0.0, None)
    mp = np.bincount(n_out, plus, minlength=n + 1)
    mm = np.bincount(n_out, minus, minlength=n + 1)
    mass = np.zeros(2 * n + 3)
    mass[n + 2:-1] = mp[1:]
    mass[n:0:-1] = mm[1:]
    mass[-1] = max(0.5 * (s0 ** k + d0 ** k), 0.0)
    mass[0] = max(0.5 * (s0 ** k - d0 ** k), 0.0)
    mass[n + 1] = max(1.0 - (mass.sum() - mass[n + 1]), 0.0)
    return mass


def boxplus(a, b):
    """``2 atanh(tanh(a/2) tanh(b/2))`` with infinite arguments allowed."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sign = np.sign(a) * np.sign(b)
    aa, bb = np.abs(a), np.abs(b)
    # numerically stable form via g-domain addition
    with np.errstate(divide="ignore"):
        g = -np.log(np.tanh(aa / 2)) - np.log(np.tanh(bb / 2))
        mag = -np.log(np.tanh(g / 2))
    return sign * mag


@functools.lru_cache(maxsize=4)
def _pair_table(delta: float, n_half: int) -> np.ndarray:
    """Output array index of box-plus for every pair of input array indices."""
    ll = np.concatenate([[-math.inf], delta * np.arange(-n_half, n_half + 1), [math.inf]])
    out = boxplus(ll[:, None], ll[None, :])
    idx = np.empty(out.shape, dtype=np.intp)
    fin = np.isfinite(out)
    idx[fin] = np.rint(out[fin] / delta).astype(np.intp) + n_half + 1
    idx[out == math.inf] = 2 * n_half + 2
    idx[out == -math.inf] = 0
    return idx


def pairwise_boxplus(a: QuantizedDensity, b: QuantizedDensity) -> QuantizedDensity:
    """Exact quantized box-plus of two independent densities (nearest-grid rounding)."""
    q = _check_grid(a, b)
    table = _pair_table(q.delta, q.n_half)
    w = np.outer(a.mass, b.mass)
    mass = np.bincount(table.ravel(), w.ravel(), minlength=a.mass.size)
    return _density(mass, q)


def cn_update(incoming: QuantizedDensity, dc: int, method: str = "fft",
              g_ratio: float = QuantParams.g_ratio) -> QuantizedDensity:
    """Box-plus of ``dc - 1`` independent copies of ``incoming``."""
    q = QuantParams(incoming.delta, incoming.l_max, g_ratio)
    k = dc - 1
    if k < 1:
        raise ValueError("check degree must be at least 2")
    if k == 1:
        return QuantizedDensity(incoming.mass.copy(), incoming.delta, incoming.n_half)
    if method == "pairwise":
        out = incoming
        for _ in range(k - 1):
            out = pairwise_boxplus(out, incoming)
        return out
    if method != "fft":
        raise ValueError("method must be 'fft' or 'pairwise'")
    return _density(_cn_fft(incoming, k, q), q)


@dataclass
class QuantOutcome:
    status: str
    iterations: int
    density: QuantizedDensity
    error_history: list[float]

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def quantized_de(dv: int, dc: int, sigma: float, q: QuantParams = QuantParams(),
                 limits: QuantLimits = QuantLimits(), method: str = "fft") -> QuantOutcome:
    """Run quantized DE; converged once the message error probability is below ``eps_conv``."""
    if dc <= dv:
        raise EnsembleError("quantized oracle needs dc > dv")
    ch = channel_density(sigma, q)
    msg = ch
    pe = msg.error_probability()
    hist = [pe]
    status = "iteration-limit"
    it = 0
    if pe <= limits.eps_conv:
        status = "converged"
    else:
        for it in range(1, limits.max_iter + 1):
            msg = vn_update(ch, cn_update(msg, dc, method, q.g_ratio), dv)
            pe = msg.error_probability()
            hist.append(pe)
            if pe <= limits.eps_conv:
                status = "converged"
                break
            w = limits.stall_window
            if len(hist) > w and hist[-w - 1] - pe < limits.eps_stall:
                status = "stalled"
                break
    return QuantOutcome(status, it, msg, hist)


def oracle_threshold(dv: int, dc: int, search: SearchRange = SearchRange(), q: QuantParams = QuantParams(),
                     limits: QuantLimits = QuantLimits(), method: str = "fft") -> ThresholdResult:
    """Threshold of the uncoupled ``(dv, dc)`` ensemble by quantized DE."""
    if dc <= dv:
        raise EnsembleError("quantized oracle needs dc > dv")

    def converges(sigma):
        out = quantized_de(dv, dc, sigma, q, limits, method)
        return out.converged, out.iterations

    lo, hi, it = bisect_threshold(converges, search)
    spec = {"dv": dv, "dc": dc, "gamma": 1, "chain_len": 1, "delta": q.delta, "l_max": q.l_max}
    return ThresholdResult(lo, (lo, hi), search.precision, "oracle", spec, 1.0 - dv / dc, it)
