"""Scalar density-evolution kernels for coupled ensembles.

Four engines follow the recursions for deterministic multi-edge-type
graphs (``rca-met``, ``ga-met``) and for node-type averaging (``rca-avg``,
``ga-avg``); ``ga-proto-avg`` extends the GA averaging to protographs with
several node types per position.

Schedule is flooding: from ``x`` (variable-to-check) the check update
produces ``y``, from which the next ``x`` is computed.  RCA quantities are
SNRs (``y`` lives in the sum-of-reciprocals domain), GA quantities are
LLR means.  Variable positions outside ``[1, C_L]`` are PERFECT.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .ensemble import (
    CoupledLayout,
    EnsembleError,
    EnsembleSpec,
    MetGraph,
    MetUnsupportedError,
    ProtographSpec,
    build_met_graph,
    couple_protograph,
)
from .functions import MI_PROMOTION, PERFECT, DomainError, FnTable, get_table

ENGINE_IDS = ("rca-met", "ga-met", "rca-avg", "ga-avg", "ga-proto-avg")
BOUNDARY_MODES = ("ideal", "reduced")


class StructureError(ValueError):
    """State does not match the graph or layout it is stepped on."""


@dataclass(frozen=True)
class DeState:
    """Messages of one iteration.

    ``x`` holds variable-to-check values (edge types, positions, or
    ``(position, variable type)``), ``y`` the check-to-variable values
    computed from the previous ``x`` (``None`` before the first step).
    """

    x: np.ndarray
    y: np.ndarray | None
    sigma: float
    iteration: int = 0


@dataclass(frozen=True)
class DeLimits:
    max_iter: int = 20000
    eps_conv: float = 1e-6
    eps_stall: float = 1e-12
    stall_window: int = 50


@dataclass
class DeOutcome:
    status: str
    iterations: int
    final_profile: np.ndarray
    position_profile: np.ndarray
    history: list[tuple[int, np.ndarray]] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _promote(values: np.ndarray, bound: float) -> np.ndarray:
    values[values > bound] = PERFECT
    return values


def _window_sums(value: np.ndarray, tail: np.ndarray, w: np.ndarray, uniform: bool):
    """Weighted sums along the last axis of MI values and their tails."""
    if uniform:
        # order-independent sums keep mirrored windows bit-identical
        w0 = w.flat[0]
        return w0 * np.sort(value, axis=-1).sum(axis=-1), w0 * np.sort(tail, axis=-1).sum(axis=-1)
    if w.ndim == 1:
        return value @ w, tail @ w
    return (value * w).sum(axis=-1), (tail * w).sum(axis=-1)


def _equal_rows(vals: np.ndarray, w: np.ndarray) -> np.ndarray:
    ww = np.broadcast_to(w, vals.shape)
    live = ww > 0
    first = np.argmax(live, axis=-1)
    ref = np.take_along_axis(vals, first[:, None], axis=-1)
    return np.all((vals == ref) | ~live, axis=-1)


def mi_average(tab: FnTable, vals: np.ndarray, w: np.ndarray, uniform: bool = False) -> np.ndarray:
    """Value whose MI is the ``w``-weighted average MI of each row of ``vals``.

    Rows whose (weighted) entries coincide return that entry unchanged.
    """
    value, tail = tab.value_and_tail(vals.ravel())
    a, b = _window_sums(value.reshape(vals.shape), tail.reshape(vals.shape), w, uniform)
    out = tab.solve(a, b)
    eq = _equal_rows(vals, w)
    out[eq] = np.take_along_axis(vals, np.argmax(np.broadcast_to(w, vals.shape) > 0, axis=-1)[:, None],
                                 axis=-1)[eq, 0]
    return out


def reciprocal_of_average(tab: FnTable, vals: np.ndarray, w: np.ndarray, uniform: bool = False) -> np.ndarray:
    """``C_f^{-1}(1 - sum_k w_k C_f(vals_k))`` per row."""
    value, tail = tab.value_and_tail(vals.ravel())
    a, b = _window_sums(value.reshape(vals.shape), tail.reshape(vals.shape), w, uniform)
    # target has MI b and tail a
    return tab.solve(b, a)


def _ga_check(m: np.ndarray, mult: np.ndarray | float, phi_tab: FnTable) -> np.ndarray:
    """``phi^{-1}(1 - (1 - phi(m))^mult)`` without cancellation."""
    f = phi_tab.value(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mult == 0, 0.0, mult * np.log1p(-f))
    return phi_tab.inverse(-np.expm1(s))


class Engine:
    """Common interface: initial state, one flooding step, MI of tracked values."""

    id: str = ""
    kind: str = ""  # "rca" or "ga"

    def __init__(self):
        self.mi_tab = get_table("cf" if self.kind == "rca" else "j")
        self.phi_tab = get_table("phi")
        self.bound = float(self.mi_tab.inverse_tail(np.array([MI_PROMOTION]))[0])

    # subclasses set these
    n_tracked: int
    x_shape: tuple[int, ...]
    y_shape: tuple[int, ...]

    def channel(self, sigma: float) -> float:
        if not sigma > 0:
            raise DomainError("sigma_n must be positive")
        return (1.0 if self.kind == "rca" else 2.0) / (sigma * sigma)

    def initial_state(self, sigma: float) -> DeState:
        x = _promote(np.full(self.x_shape, self.channel(sigma)) * self._channel_mask(), self.bound)
        return DeState(x, None, float(sigma), 0)

    def _channel_mask(self):
        return 1.0

    def _check(self, state: DeState) -> None:
        if state.x.shape != self.x_shape:
            raise StructureError(f"{self.id}: state shape {state.x.shape} does not match {self.x_shape}")

    def step(self, state: DeState) -> DeState:
        raise NotImplementedError

    def tails(self, state: DeState) -> np.ndarray:
        """``1 - MI`` of every tracked variable-side value (flattened)."""
        return self.mi_tab.tail(state.x.ravel())

    def mi(self, state: DeState) -> np.ndarray:
        return self.mi_tab.value(state.x.ravel())

    def position_profile(self, mi: np.ndarray) -> np.ndarray:
        return mi


class MetEngine(Engine):
    """RCA or GA recursion on a deterministic MET graph, one value per edge type."""

    def __init__(self, graph: MetGraph, kind: str):
        self.kind = kind
        self.id = f"{kind}-met"
        super().__init__()
        self.graph = graph
        m = graph.n_edge_types
        self.n_tracked = m
        self.x_shape = self.y_shape = (m,)
        edges = graph.edge_types
        idx = {e.id: n for n, e in enumerate(edges)}
        var_of = np.array([e.var_type for e in edges])
        chk_of = np.array([e.chk_type for e in edges])
        self.var_of = var_of
        self.n_pos = graph.n_var_types

        def pairs(group_of, q_attr):
            rows, cols, coef = [], [], []
            for e in edges:
                for j in edges:
                    if group_of[idx[j.id]] != group_of[idx[e.id]]:
                        continue
                    c = getattr(j, q_attr) - (1 if j.id == e.id else 0)
                    if c:
                        rows.append(idx[e.id])
                        cols.append(idx[j.id])
                        coef.append(float(c))
            return np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp), np.array(coef)

        self.c_rows, self.c_cols, self.c_coef = pairs(chk_of, "q_chk")
        self.v_rows, self.v_cols, self.v_coef = pairs(var_of, "q_var")

    def _csum(self, terms: np.ndarray) -> np.ndarray:
        return np.bincount(self.c_rows, weights=self.c_coef * terms[self.c_cols], minlength=self.n_tracked)

    def _vsum(self, terms: np.ndarray) -> np.ndarray:
        return np.bincount(self.v_rows, weights=self.v_coef * terms[self.v_cols], minlength=self.n_tracked)

    def step(self, state: DeState) -> DeState:
        self._check(state)
        x = state.x
        ch = self.channel(state.sigma)
        if self.kind == "rca":
            value, tail = self.mi_tab.value_and_tail(x)
            y = self._csum(self.mi_tab.solve(tail, value))
            value, tail = self.mi_tab.value_and_tail(y)
            x_new = ch + self._vsum(self.mi_tab.solve(tail, value))
        else:
            f = self.phi_tab.value(x)
            with np.errstate(divide="ignore"):
                s = self._csum(np.log1p(-f))
            y = _promote(self.phi_tab.inverse(-np.expm1(s)), self.bound)
            x_new = ch + self._vsum(y)
        return DeState(_promote(x_new, self.bound), y, state.sigma, state.iteration + 1)

    def position_profile(self, mi: np.ndarray) -> np.ndarray:
        counts = np.bincount(self.var_of - 1, minlength=self.n_pos)
        return np.bincount(self.var_of - 1, weights=mi, minlength=self.n_pos) / counts


class AvgEngine(Engine):
    """Node-type averaging recursion (RCA or GA) for a coupled regular ensemble.

    ``boundary="ideal"`` keeps the full check degree and lets the PERFECT
    out-of-chain terms enter the averages; ``"reduced"`` drops those terms,
    renormalizes the weights and uses each terminating check's actual
    degree.
    """

    def __init__(self, spec: EnsembleSpec, kind: str, boundary: str = "ideal"):
        if boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        self.kind = kind
        self.id = f"{kind}-avg"
        super().__init__()
        self.spec = spec
        self.boundary = boundary
        n, g = spec.chain_len, spec.gamma
        n_chk = n + g - 1
        self.n_tracked = n
        self.x_shape = (n,)
        self.y_shape = (n_chk,)
        w = np.array(spec.weights)
        self.w = w
        self.uniform = spec.uniform
        k = np.arange(g)
        # check j (0-based) sees variable j - k; padded index shifts by g - 1
        self.chk_idx = np.arange(n_chk)[:, None] - k[None, :] + (g - 1)
        # variable i (0-based) sees check i + k
        self.var_idx = np.arange(n)[:, None] + k[None, :]
        valid = (np.arange(n_chk)[:, None] - k[None, :] >= 0) & (np.arange(n_chk)[:, None] - k[None, :] < n)
        if boundary == "ideal":
            self.chk_w = w
            self.chk_mult = float(spec.dc - 1)
            self.chk_uniform = self.uniform
        else:
            live = np.where(valid, w[None, :], 0.0)
            tot = live.sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                self.chk_w = np.where(tot[:, None] > 0, live / tot[:, None], 0.0)
            self.chk_mult = np.maximum(spec.dc * tot - 1.0, 0.0)
            self.chk_uniform = False
        self.pad = g - 1

    def extended_x(self, state: DeState) -> np.ndarray:
        """``x`` with PERFECT padding for positions outside the chain."""
        fill = np.full(self.pad, PERFECT)
        return np.concatenate([fill, state.x, fill])

    def step(self, state: DeState) -> DeState:
        self._check(state)
        xw = self.extended_x(state)[self.chk_idx]
        ch = self.channel(state.sigma)
        if self.kind == "rca":
            r = reciprocal_of_average(self.mi_tab, xw, self.chk_w, self.chk_uniform)
            with np.errstate(invalid="ignore"):
                y = np.where(np.asarray(self.chk_mult) == 0, 0.0, self.chk_mult * r)
            x_new = ch + (self.spec.dv - 1) * reciprocal_of_average(self.mi_tab, y[self.var_idx], self.w,
                                                                    self.uniform)
        else:
            m = mi_average(self.mi_tab, xw, self.chk_w, self.chk_uniform)
            y = _promote(_ga_check(m, self.chk_mult, self.phi_tab), self.bound)
            x_new = ch + (self.spec.dv - 1) * mi_average(self.mi_tab, y[self.var_idx], self.w, self.uniform)
        return DeState(_promote(x_new, self.bound), y, state.sigma, state.iteration + 1)


class ProtoAvgEngine(Engine):
    """GA averaging over a coupled protograph, one value per (position, node type).

    Each node averages its incoming values in the J domain, weighted by
    bundle multiplicity, then applies the GA check or variable rule with
    its own total degree.  Punctured variables get no channel term.
    """

    kind = "ga"
    id = "ga-proto-avg"

    def __init__(self, layout: CoupledLayout, boundary: str = "ideal"):
        if boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        super().__init__()
        self.layout = layout
        self.boundary = boundary
        n, nv, nc = layout.chain_len, layout.n_var_types, layout.n_chk_types
        n_cp = layout.n_check_positions
        self.n_tracked = n * nv
        self.x_shape = (n, nv)
        self.y_shape = (n_cp, nc)
        proto = layout.proto
        sentinel = n * nv
        full_deg = proto.base.sum(axis=1)
        # check side: terms over (offset, var type); padded with the sentinel
        cterms = [[(k, v, int(s[c, v])) for k, s in enumerate(proto.spread) for v in range(nv) if s[c, v]]
                  for c in range(nc)]
        t_max = max(len(t) for t in cterms)
        idx = np.full((n_cp, nc, t_max), sentinel, dtype=np.intp)
        wts = np.zeros((n_cp, nc, t_max))
        mult = np.zeros((n_cp, nc))
        for c, terms in enumerate(cterms):
            for j in range(n_cp):
                live_deg = 0
                for t, (k, v, mlt) in enumerate(terms):
                    i = j - k  # 0-based variable position
                    inside = 0 <= i < n
                    if inside:
                        idx[j, c, t] = i * nv + v
                        live_deg += mlt
                    if inside or boundary == "ideal":
                        wts[j, c, t] = mlt
                deg = full_deg[c] if boundary == "ideal" else live_deg
                if deg:
                    wts[j, c] /= deg
                mult[j, c] = max(deg - 1, 0)
        self.c_idx = idx.reshape(n_cp * nc, t_max)
        self.c_w = wts.reshape(n_cp * nc, t_max)
        self.c_mult = mult.ravel()
        # variable side: terms over (offset, check type)
        var_deg = proto.base.sum(axis=0)
        vterms = [[(k, c, int(s[c, v])) for k, s in enumerate(proto.spread) for c in range(nc) if s[c, v]]
                  for v in range(nv)]
        tv = max(len(t) for t in vterms)
        vidx = np.zeros((n, nv, tv), dtype=np.intp)
        vw = np.zeros((n, nv, tv))
        for v, terms in enumerate(vterms):
            for i in range(n):
                for t, (k, c, mlt) in enumerate(terms):
                    vidx[i, v, t] = (i + k) * nc + c
                    vw[i, v, t] = mlt / var_deg[v]
        self.v_idx = vidx.reshape(n * nv, tv)
        self.v_w = vw.reshape(n * nv, tv)
        self.v_mult = np.tile(var_deg - 1.0, n)
        mask = np.ones(nv)
        mask[list(proto.punctured)] = 0.0
        self.ch_mask = np.tile(mask, n)

    def _channel_mask(self):
        return self.ch_mask.reshape(self.x_shape)

    def step(self, state: DeState) -> DeState:
        self._check(state)
        xf = np.append(state.x.ravel(), PERFECT)
        m = mi_average(self.mi_tab, xf[self.c_idx], self.c_w)
        y = _promote(_ga_check(m, self.c_mult, self.phi_tab), self.bound)
        my = mi_average(self.mi_tab, y[self.v_idx], self.v_w)
        x_new = self.channel(state.sigma) * self.ch_mask + self.v_mult * my
        x_new = _promote(x_new, self.bound).reshape(self.x_shape)
        return DeState(x_new, y.reshape(self.y_shape), state.sigma, state.iteration + 1)

    def position_profile(self, mi: np.ndarray) -> np.ndarray:
        return mi.reshape(self.x_shape).mean(axis=1)


# ---------------------------------------------------------------------------
# construction and public step functions
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _met_engine(graph: MetGraph, kind: str) -> MetEngine:
    return MetEngine(graph, kind)


@functools.lru_cache(maxsize=64)
def _avg_engine(spec: EnsembleSpec, kind: str, boundary: str) -> AvgEngine:
    return AvgEngine(spec, kind, boundary)


@functools.lru_cache(maxsize=16)
def _proto_engine(layout: CoupledLayout, boundary: str) -> ProtoAvgEngine:
    return ProtoAvgEngine(layout, boundary)


def make_engine(engine_id: str, target, *, boundary: str = "ideal") -> Engine:
    """Build the engine ``engine_id`` for an ensemble, MET graph or layout.

    ``ga-proto-avg`` accepts a :class:`CoupledLayout`, or an
    :class:`EnsembleSpec` (expanded through its smallest protograph).
    """
    if engine_id in ("rca-met", "ga-met"):
        if isinstance(target, EnsembleSpec):
            target = build_met_graph(target)
        if not isinstance(target, MetGraph):
            raise EnsembleError(f"{engine_id} needs an ensemble or MET graph")
        return _met_engine(target, engine_id[:-4])
    if engine_id in ("rca-avg", "ga-avg"):
        if not isinstance(target, EnsembleSpec):
            raise EnsembleError(f"{engine_id} needs an ensemble")
        return _avg_engine(target, engine_id[:-4], boundary)
    if engine_id == "ga-proto-avg":
        if isinstance(target, EnsembleSpec):
            if not target.uniform:
                raise EnsembleError("ga-proto-avg on an ensemble requires uniform weights")
            target = couple_protograph(ProtographSpec.regular(target.dv, target.dc, target.gamma),
                                       target.chain_len)
        if not isinstance(target, CoupledLayout):
            raise EnsembleError("ga-proto-avg needs a coupled protograph layout")
        return _proto_engine(target, boundary)
    raise ValueError(f"unknown engine {engine_id!r}; expected one of {ENGINE_IDS}")


def rca_met_step(state: DeState, graph: MetGraph) -> DeState:
    return _met_engine(graph, "rca").step(state)


def ga_met_step(state: DeState, graph: MetGraph) -> DeState:
    return _met_engine(graph, "ga").step(state)


def rca_avg_step(state: DeState, spec: EnsembleSpec, boundary: str = "ideal") -> DeState:
    return _avg_engine(spec, "rca", boundary).step(state)


def ga_avg_step(state: DeState, spec: EnsembleSpec, boundary: str = "ideal") -> DeState:
    return _avg_engine(spec, "ga", boundary).step(state)


def ga_proto_avg_step(state: DeState, layout: CoupledLayout, boundary: str = "ideal") -> DeState:
    return _proto_engine(layout, boundary).step(state)


def run_de(engine, target, sigma: float, limits: DeLimits = DeLimits(), *, boundary: str = "ideal",
           dump_every: int = 0) -> DeOutcome:
    """Iterate an engine until convergence, stall, or the iteration limit.

    Converged means every tracked value has MI >= 1 - eps_conv; stalled
    means no tracked MI improved by eps_stall over the last
    ``stall_window`` iterations.  With ``dump_every > 0`` the position
    profile is recorded every that many iterations (and at the end).
    """
    if not sigma > 0:
        raise DomainError("sigma_n must be positive")
    eng = engine if isinstance(engine, Engine) else make_engine(engine, target, boundary=boundary)
    state = eng.initial_state(sigma)
    tails = eng.tails(state)
    history = []
    window = deque(maxlen=limits.stall_window + 1)
    window.append(tails)
    status = "iteration-limit"
    if dump_every > 0:
        history.append((0, eng.position_profile(1.0 - tails)))
    if tails.max() <= limits.eps_conv:
        status = "converged"
    else:
        for _ in range(limits.max_iter):
            state = eng.step(state)
            tails = eng.tails(state)
            window.append(tails)
            it = state.iteration
            if dump_every > 0 and it % dump_every == 0:
                history.append((it, eng.position_profile(1.0 - tails)))
            if tails.max() <= limits.eps_conv:
                status = "converged"
                break
            if len(window) == window.maxlen and np.max(window[0] - tails) < limits.eps_stall:
                status = "stalled"
                break
    mi = eng.mi(state)
    prof = eng.position_profile(mi)
    if dump_every > 0 and (not history or history[-1][0] != state.iteration):
        history.append((state.iteration, prof))
    return DeOutcome(status, state.iteration, mi, prof, history)


def history_csv(history: list[tuple[int, np.ndarray]]) -> str:
    """Profile history as CSV with columns iteration, position, mutual_information."""
    lines = ["iteration,position,mutual_information"]
    for it, prof in history:
        lines.extend(f"{it},{i + 1},{float(v)!r}" for i, v in enumerate(prof))
    return "\n".join(lines) + "\n"
