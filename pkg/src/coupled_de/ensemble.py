"""Coupled-ensemble descriptors, design rate, MET graphs and protograph coupling."""
from __future__ import annotations

import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class EnsembleError(ValueError):
    """Invalid ensemble or protograph description."""


class MetUnsupportedError(EnsembleError):
    """The deterministic MET construction does not apply to this ensemble."""


class DegenerateRateWarning(UserWarning):
    """Design rate is zero or negative (very short chains)."""


WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class EnsembleSpec:
    """A terminated ``(d_v, d_c, gamma, C_L)`` spatially coupled ensemble.

    ``weights[k]`` is the fraction of each variable node's edges that go
    to the check position ``k`` steps ahead; the default is uniform.
    """

    dv: int
    dc: int
    gamma: int
    chain_len: int
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("dv", "dc", "gamma", "chain_len"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
                raise EnsembleError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        if self.dv < 2:
            raise EnsembleError("dv must be at least 2")
        if self.dc <= self.dv:
            raise EnsembleError("dc must exceed dv")
        if self.gamma < 1 or self.chain_len < 1:
            raise EnsembleError("gamma and chain_len must be at least 1")
        if self.weights is None:
            object.__setattr__(self, "weights", (1.0 / self.gamma,) * self.gamma)
        else:
            w = tuple(float(x) for x in self.weights)
            if len(w) != self.gamma:
                raise EnsembleError(f"expected {self.gamma} coupling weights, got {len(w)}")
            if any(x < 0 or not math.isfinite(x) for x in w):
                raise EnsembleError("coupling weights must be non-negative")
            if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
                raise EnsembleError("coupling weights must sum to 1")
            object.__setattr__(self, "weights", w)

    @property
    def uniform(self) -> bool:
        return all(w == 1.0 / self.gamma for w in self.weights)

    @property
    def n_check_positions(self) -> int:
        return self.chain_len + self.gamma - 1

    def summary(self) -> dict:
        out = {"dv": self.dv, "dc": self.dc, "gamma": self.gamma, "chain_len": self.chain_len}
        if not self.uniform:
            out["weights"] = list(self.weights)
        return out


def design_rate(spec: EnsembleSpec) -> float:
    """Design rate of the terminated, uniformly coupled ensemble.

    ``1 - (dv/dc) (C_L + gamma + 1 - 2 sum_{i=0}^{gamma} (i/gamma)^dc) / C_L``
    """
    if not spec.uniform:
        raise EnsembleError("the design-rate formula assumes uniform coupling weights")
    g = spec.gamma
    s = math.fsum((i / g) ** spec.dc for i in range(g + 1))
    rate = 1.0 - (spec.dv / spec.dc) * (spec.chain_len + g + 1 - 2.0 * s) / spec.chain_len
    if rate <= 0:
        warnings.warn(f"degenerate rate {rate:.6g} for {spec}", DegenerateRateWarning, stacklevel=2)
    return rate


def ensemble_rate(spec: EnsembleSpec) -> float:
    """Rate used in reports: the design-rate formula for uniform weights.

    Non-uniform weights fall back to counting check positions that receive
    edges, ``1 - (dv/dc) * n_active_checks / C_L``.
    """
    if spec.uniform:
        return design_rate(spec)
    nz = [k for k, w in enumerate(spec.weights) if w > 0]
    span = nz[-1] - nz[0] + 1
    return 1.0 - (spec.dv / spec.dc) * (spec.chain_len + span - 1) / spec.chain_len


# ---------------------------------------------------------------------------
# multi-edge-type graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeType:
    id: int
    var_type: int
    chk_type: int
    q_var: int
    q_chk: int


@dataclass(frozen=True)
class MetGraph:
    """Edge-type description of a deterministic coupled ensemble.

    Node types are numbered from 1 like chain positions; edge ids from 1.
    ``var_counts``/``chk_counts`` give node multiplicities in a minimal
    lifting, so socket balance can be checked with exact integers.
    """

    edge_types: tuple[EdgeType, ...]
    var_fractions: tuple[Fraction, ...]
    chk_fractions: tuple[Fraction, ...]
    var_counts: tuple[int, ...]
    chk_counts: tuple[int, ...]

    @property
    def n_edge_types(self) -> int:
        return len(self.edge_types)

    @property
    def n_var_types(self) -> int:
        return len(self.var_fractions)

    @property
    def n_chk_types(self) -> int:
        return len(self.chk_fractions)

    def var_edges(self, var_type: int) -> list[EdgeType]:
        return [e for e in self.edge_types if e.var_type == var_type]

    def chk_edges(self, chk_type: int) -> list[EdgeType]:
        return [e for e in self.edge_types if e.chk_type == chk_type]

    def var_multinomial(self) -> list[tuple[Fraction, dict[int, int]]]:
        """Terms ``(L_q, {edge_id: q})`` of the variable-node multinomial."""
        return [(self.var_fractions[v - 1], {e.id: e.q_var for e in self.var_edges(v)})
                for v in range(1, self.n_var_types + 1)]

    def chk_multinomial(self) -> list[tuple[Fraction, dict[int, int]]]:
        return [(self.chk_fractions[c - 1], {e.id: e.q_chk for e in self.chk_edges(c)})
                for c in range(1, self.n_chk_types + 1)]

    def socket_balanced(self) -> bool:
        return all(self.var_counts[e.var_type - 1] * e.q_var == self.chk_counts[e.chk_type - 1] * e.q_chk
                   for e in self.edge_types)

    @staticmethod
    def format_multinomial(terms) -> str:
        parts = []
        for coef, sockets in terms:
            mono = "".join(f"s{i}" + (f"^{q}" if q > 1 else "") for i, q in sockets.items())
            parts.append(f"{float(coef):g}*{mono}")
        return " + ".join(parts)


def build_met_graph(spec: EnsembleSpec) -> MetGraph:
    """Deterministic MET graph: variable position ``i`` sends ``dv/gamma``
    edges to each check position ``i .. i+gamma-1``.

    Edge type ``(i-1)*gamma + k + 1`` joins variable type ``i`` and check
    type ``i + k``.
    """
    g = spec.gamma
    if not spec.uniform:
        raise MetUnsupportedError("deterministic MET unsupported: non-uniform coupling weights; "
                                  "use an averaging engine")
    if spec.dv % g or spec.dc % g:
        raise MetUnsupportedError(f"deterministic MET unsupported: gamma={g} must divide dv={spec.dv} "
                                  f"and dc={spec.dc}; use an averaging engine")
    qv, qc = spec.dv // g, spec.dc // g
    edges = []
    for i in range(1, spec.chain_len + 1):
        for k in range(g):
            edges.append(EdgeType(len(edges) + 1, i, i + k, qv, qc))
    n_chk = spec.n_check_positions
    # minimal lifting with integer check counts: checks per position = N dv/dc
    lift = spec.dc // math.gcd(spec.dv, spec.dc)
    n_checks_pos = lift * spec.dv // spec.dc
    return MetGraph(
        edge_types=tuple(edges),
        var_fractions=(Fraction(1, spec.chain_len),) * spec.chain_len,
        chk_fractions=(Fraction(1, n_chk),) * n_chk,
        var_counts=(lift,) * spec.chain_len,
        chk_counts=(n_checks_pos,) * n_chk,
    )


# ---------------------------------------------------------------------------
# protographs
# ---------------------------------------------------------------------------

def _int_matrix(m, what: str) -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2 or arr.size == 0:
        raise EnsembleError(f"{what} must be a non-empty matrix")
    if not np.all(np.equal(np.mod(arr, 1), 0)) or np.any(arr < 0):
        raise EnsembleError(f"{what} must hold non-negative integers")
    return arr.astype(np.int64)


@dataclass(frozen=True, eq=False)
class ProtographSpec:
    """Base matrix (checks x variables) with one spreading matrix per offset."""

    base: np.ndarray
    spread: tuple[np.ndarray, ...]
    punctured: frozenset[int] = frozenset()
    allow_degree_one: bool = False

    def __post_init__(self):
        base = _int_matrix(self.base, "base")
        if not self.spread:
            raise EnsembleError("at least one spreading matrix is required")
        spread = tuple(_int_matrix(s, f"spread[{k}]") for k, s in enumerate(self.spread))
        for k, s in enumerate(spread):
            if s.shape != base.shape:
                raise EnsembleError(f"spread[{k}] has shape {s.shape}, base has {base.shape}")
        if not np.array_equal(sum(spread), base):
            raise EnsembleError("spreading matrices must sum to the base matrix")
        punct = frozenset(int(p) for p in self.punctured)
        if any(p < 0 or p >= base.shape[1] for p in punct):
            raise EnsembleError("punctured column index out of range")
        if len(punct) == base.shape[1]:
            raise EnsembleError("all variable columns are punctured")
        degs = base.sum(axis=0)
        if np.any(degs == 0):
            raise EnsembleError("every variable column needs at least one edge")
        if not self.allow_degree_one and np.any(degs < 2):
            raise EnsembleError("degree-1 variable columns require allow_degree_one")
        if np.any(base.sum(axis=1) == 0):
            raise EnsembleError("every check row needs at least one edge")
        for arr in (base, *spread):
            arr.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "spread", spread)
        object.__setattr__(self, "punctured", punct)

    @property
    def gamma(self) -> int:
        return len(self.spread)

    @property
    def n_checks(self) -> int:
        return self.base.shape[0]

    @property
    def n_vars(self) -> int:
        return self.base.shape[1]

    @classmethod
    def regular(cls, dv: int, dc: int, gamma: int) -> ProtographSpec:
        """Smallest protograph of the ``(dv, dc)`` ensemble, edges spread evenly."""
        g = math.gcd(dv, dc)
        rows, cols = dv // g, dc // g
        if g % gamma:
            raise EnsembleError(f"cannot spread entries of {g} evenly over gamma={gamma} offsets")
        base = np.full((rows, cols), g)
        return cls(base, tuple(np.full((rows, cols), g // gamma) for _ in range(gamma)))

    @classmethod
    def from_dict(cls, data: dict) -> ProtographSpec:
        try:
            base = data["base"]
            spread = data.get("spread")
        except (KeyError, TypeError) as exc:
            raise EnsembleError("protograph config needs a 'base' matrix") from exc
        if spread is None:
            spread = [base]
        return cls(np.array(base), tuple(np.array(s) for s in spread),
                   frozenset(data.get("punctured", ())), bool(data.get("allow_degree_one", False)))

    @classmethod
    def from_file(cls, path) -> ProtographSpec:
        cfg = load_config(path)
        return cls.from_dict(cfg.get("protograph", cfg))

    def to_dict(self) -> dict:
        return {"base": self.base.tolist(), "spread": [s.tolist() for s in self.spread],
                "punctured": sorted(self.punctured)}


def load_config(path) -> dict:
    """Read a JSON or TOML document (chosen by extension, JSON otherwise)."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise EnsembleError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text.decode())
        return json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise EnsembleError(f"cannot parse config {path}: {exc}") from exc


@dataclass(frozen=True)
class Bundle:
    """``mult`` parallel edges between variable ``(var_pos, var_type)`` and
    check ``(chk_pos, chk_type)``, with ``chk_pos = var_pos + offset``."""

    var_pos: int
    var_type: int
    chk_pos: int
    chk_type: int
    offset: int
    mult: int


@dataclass(frozen=True, eq=False)
class CoupledLayout:
    """A protograph coupled over ``chain_len`` positions and terminated.

    Variable positions run ``1..C_L``; check positions ``1..C_L+gamma-1``.
    """

    proto: ProtographSpec
    chain_len: int
    bundles: tuple[Bundle, ...] = field(repr=False)

    @property
    def gamma(self) -> int:
        return self.proto.gamma

    @property
    def n_var_types(self) -> int:
        return self.proto.n_vars

    @property
    def n_chk_types(self) -> int:
        return self.proto.n_checks

    @property
    def n_check_positions(self) -> int:
        return self.chain_len + self.gamma - 1

    def var_bundles(self, pos: int, var_type: int) -> list[Bundle]:
        return [b for b in self.bundles if b.var_pos == pos and b.var_type == var_type]

    def check_bundles(self, pos: int, chk_type: int) -> list[Bundle]:
        return [b for b in self.bundles if b.chk_pos == pos and b.chk_type == chk_type]

    def var_degrees(self) -> np.ndarray:
        return self.proto.base.sum(axis=0)

    def check_degree(self, pos: int, chk_type: int) -> int:
        return sum(b.mult for b in self.check_bundles(pos, chk_type))

    def check_degrees(self) -> np.ndarray:
        """Actual degrees, shape ``(n_check_positions, n_chk_types)``."""
        deg = np.zeros((self.n_check_positions, self.n_chk_types), dtype=np.int64)
        for b in self.bundles:
            deg[b.chk_pos - 1, b.chk_type] += b.mult
        return deg

    def socket_balanced(self) -> bool:
        var_side = np.zeros((self.chain_len, self.n_var_types), dtype=np.int64)
        chk_side = np.zeros((self.n_check_positions, self.n_chk_types), dtype=np.int64)
        for b in self.bundles:
            var_side[b.var_pos - 1, b.var_type] += b.mult
        chk_side[:] = self.check_degrees()
        return (np.all(var_side == self.var_degrees()[None, :])
                and var_side.sum() == chk_side.sum()
                and np.array_equal(chk_side.sum(axis=0), self.proto.base.sum(axis=1) * self.chain_len))

    def rate(self) -> float:
        """``1 - #checks / #unpunctured variables`` of the coupled protograph."""
        n_chk = int(np.count_nonzero(self.check_degrees()))
        n_var = (self.n_var_types - len(self.proto.punctured)) * self.chain_len
        return 1.0 - n_chk / n_var


def couple_protograph(proto: ProtographSpec, chain_len: int) -> CoupledLayout:
    """Replicate ``proto`` at positions ``1..chain_len``; offset-``k`` edges
    land ``k`` positions ahead, terminating checks at ``C_L+1..C_L+gamma-1``."""
    if chain_len < 1:
        raise EnsembleError("chain_len must be at least 1")
    bundles = []
    for i in range(1, chain_len + 1):
        for v in range(proto.n_vars):
            for k, sk in enumerate(proto.spread):
                for c in range(proto.n_checks):
                    if sk[c, v]:
                        bundles.append(Bundle(i, v, i + k, c, k, int(sk[c, v])))
    return CoupledLayout(proto, chain_len, tuple(bundles))
