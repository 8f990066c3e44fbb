import json
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_de.ensemble import (
    DegenerateRateWarning,
    EnsembleError,
    EnsembleSpec,
    MetGraph,
    MetUnsupportedError,
    ProtographSpec,
    build_met_graph,
    couple_protograph,
    design_rate,
    ensemble_rate,
    load_config,
)


def hand_rate(dv, dc, g, n):
    s = sum((i / g) ** dc for i in range(g + 1))
    return 1 - dv / dc * (n + g + 1 - 2 * s) / n


def test_spec_defaults_and_validation():
    s = EnsembleSpec(3, 6, 3, 10)
    assert s.weights == (1 / 3,) * 3 and s.uniform
    assert s.n_check_positions == 12
    with pytest.raises(EnsembleError):
        EnsembleSpec(3, 6, 3, 10, (0.5, 0.5, 0.1))
    with pytest.raises(EnsembleError):
        EnsembleSpec(3, 6, 2, 10, (0.5, 0.25, 0.25))
    with pytest.raises(EnsembleError):
        EnsembleSpec(3, 3, 1, 1)
    with pytest.raises(EnsembleError):
        EnsembleSpec(1, 6, 1, 1)
    with pytest.raises(EnsembleError):
        EnsembleSpec(3, 6, 0, 1)
    with pytest.raises(EnsembleError):
        EnsembleSpec(3, 6, 1, 0)
    with pytest.raises(EnsembleError):
        EnsembleSpec(3, 6, 2, 5, (1.2, -0.2))


def test_design_rate_values():
    # hand evaluation: sum_{i=0}^{3} (i/3)^6 = 1.0891632...
    assert sum((i / 3) ** 6 for i in range(4)) == pytest.approx(1.0891632, abs=1e-7)
    assert design_rate(EnsembleSpec(3, 6, 3, 10)) == pytest.approx(0.408916, abs=1e-6)
    assert design_rate(EnsembleSpec(3, 6, 3, 2)) == pytest.approx(0.044582, abs=1e-6)
    assert design_rate(EnsembleSpec(3, 6, 3, 10 ** 9)) == pytest.approx(0.5, abs=1e-8)


def test_design_rate_increasing_and_bounded():
    rates = [design_rate(EnsembleSpec(3, 6, 3, n)) for n in range(2, 201)]
    assert all(b > a for a, b in zip(rates, rates[1:]))
    assert all(r < 0.5 for r in rates)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(1, 6), st.integers(1, 4), st.integers(1, 300))
def test_design_rate_matches_hand_formula(dv, extra, g, n):
    dc = dv + extra
    spec = EnsembleSpec(dv, dc, g, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRateWarning)
        assert design_rate(spec) == pytest.approx(hand_rate(dv, dc, g, n), abs=1e-12)


def test_degenerate_rate_warns():
    with pytest.warns(DegenerateRateWarning):
        r = design_rate(EnsembleSpec(3, 6, 3, 1))
    assert r <= 0


def test_design_rate_rejects_non_uniform():
    spec = EnsembleSpec(3, 6, 2, 10, (0.75, 0.25))
    with pytest.raises(EnsembleError):
        design_rate(spec)
    assert ensemble_rate(spec) == pytest.approx(1 - 0.5 * 11 / 10)


def test_met_fixture_3623():
    g = build_met_graph(EnsembleSpec(3, 6, 3, 2))
    assert g.n_edge_types == 6 and g.n_var_types == 2 and g.n_chk_types == 4
    var = g.var_multinomial()
    assert var == [(Fraction(1, 2), {1: 1, 2: 1, 3: 1}), (Fraction(1, 2), {4: 1, 5: 1, 6: 1})]
    chk = g.chk_multinomial()
    assert chk == [(Fraction(1, 4), {1: 2}), (Fraction(1, 4), {2: 2, 4: 2}),
                   (Fraction(1, 4), {3: 2, 5: 2}), (Fraction(1, 4), {6: 2})]
    assert MetGraph.format_multinomial(chk) == "0.25*s1^2 + 0.25*s2^2s4^2 + 0.25*s3^2s5^2 + 0.25*s6^2"
    assert MetGraph.format_multinomial(var) == "0.5*s1s2s3 + 0.5*s4s5s6"
    assert g.socket_balanced()


def test_met_4823():
    g = build_met_graph(EnsembleSpec(4, 8, 2, 3))
    assert g.n_edge_types == 6
    assert all(e.q_var == 2 for e in g.edge_types)
    assert g.socket_balanced()


def test_met_requires_divisibility():
    with pytest.raises(MetUnsupportedError, match="deterministic MET unsupported"):
        build_met_graph(EnsembleSpec(4, 8, 3, 5))
    with pytest.raises(MetUnsupportedError):
        build_met_graph(EnsembleSpec(3, 6, 3, 5, (0.5, 0.25, 0.25)))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([(3, 6, 3), (3, 6, 1), (4, 8, 2), (4, 8, 4), (2, 4, 2), (5, 10, 5), (3, 9, 3)]),
       st.integers(1, 30))
def test_met_counts_and_balance(kind, n):
    dv, dc, gm = kind
    g = build_met_graph(EnsembleSpec(dv, dc, gm, n))
    assert g.n_edge_types == gm * n
    assert g.n_chk_types == n + gm - 1
    assert g.socket_balanced()
    assert sum(g.var_fractions) == 1 and sum(g.chk_fractions) == 1
    # boundary checks have reduced degree
    degs = [sum(q for q in m.values()) for _, m in g.chk_multinomial()]
    assert max(degs) <= dc and (gm == 1 or degs[0] < dc)


def test_regular_protograph():
    p = ProtographSpec.regular(3, 6, 3)
    assert p.base.tolist() == [[3, 3]]
    assert [s.tolist() for s in p.spread] == [[[1, 1]]] * 3
    with pytest.raises(EnsembleError):
        ProtographSpec.regular(3, 6, 2)


def test_protograph_validation():
    with pytest.raises(EnsembleError):
        ProtographSpec(np.array([[3, 3]]), (np.array([[1, 1]]), np.array([[1, 1]])))
    with pytest.raises(EnsembleError):
        ProtographSpec(np.array([[1, 2]]), (np.array([[1, 2]]),))
    ok = ProtographSpec(np.array([[1, 2]]), (np.array([[1, 2]]),), allow_degree_one=True)
    assert ok.n_vars == 2
    with pytest.raises(EnsembleError):
        ProtographSpec(np.array([[2, -1]]), (np.array([[2, -1]]),))
    with pytest.raises(EnsembleError):
        ProtographSpec(np.array([[2, 2]]), (np.array([[2, 2]]),), punctured=frozenset({0, 1}))


def test_couple_two_type_uncoupled():
    p = ProtographSpec(np.array([[2, 1], [1, 2]]), (np.array([[2, 1], [1, 2]]),))
    lay = couple_protograph(p, 4)
    assert lay.n_check_positions == 4
    # gamma = 1: every bundle stays at its own position
    assert all(b.chk_pos == b.var_pos for b in lay.bundles)
    assert lay.socket_balanced()
    assert lay.check_degrees().tolist() == [[3, 3]] * 4


def test_couple_33_spread():
    p = ProtographSpec(np.array([[3, 3]]), tuple(np.array([[1, 1]]) for _ in range(3)))
    lay = couple_protograph(p, 5)
    assert lay.chain_len == 5 and lay.n_check_positions == 7
    assert lay.check_degrees()[:, 0].tolist() == [2, 4, 6, 6, 6, 4, 2]
    assert lay.var_bundles(1, 0) == [b for b in lay.bundles if b.var_pos == 1 and b.var_type == 0]
    assert sum(b.mult for b in lay.var_bundles(3, 1)) == 3
    assert lay.socket_balanced()


def test_protograph_rate_matches_design_rate():
    # the regular protograph reproduces the checks that carry edges
    lay = couple_protograph(ProtographSpec.regular(3, 6, 3), 10)
    assert lay.rate() == pytest.approx(1 - 12 / 20)
    punct = ProtographSpec(np.array([[3, 3]]), (np.array([[3, 3]]),), punctured=frozenset({1}))
    assert couple_protograph(punct, 2).rate() == pytest.approx(0.0)


def test_layout_matches_met_counts():
    met = build_met_graph(EnsembleSpec(3, 6, 3, 2))
    lay = couple_protograph(ProtographSpec(np.array([[6]]), tuple(np.array([[2]]) for _ in range(3))), 2)
    # one variable type per position with 3 bundles of multiplicity 2
    assert len(lay.bundles) == met.n_edge_types
    assert lay.check_degrees()[:, 0].tolist() == [2, 4, 4, 2]


@pytest.mark.parametrize("suffix", [".json", ".toml"])
def test_protograph_config_files(tmp_path, suffix):
    path = tmp_path / f"p{suffix}"
    if suffix == ".json":
        path.write_text(json.dumps({"base": [[2, 1], [1, 2]], "spread": [[[1, 1], [0, 1]], [[1, 0], [1, 1]]],
                                    "punctured": [1]}))
    else:
        path.write_text('base = [[2, 1], [1, 2]]\nspread = [[[1, 1], [0, 1]], [[1, 0], [1, 1]]]\npunctured = [1]\n')
    p = ProtographSpec.from_file(path)
    assert p.gamma == 2 and p.punctured == frozenset({1})
    assert ProtographSpec.from_dict(p.to_dict()).to_dict() == p.to_dict()


def test_config_errors(tmp_path):
    with pytest.raises(EnsembleError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(EnsembleError):
        load_config(bad)
    with pytest.raises(EnsembleError):
        ProtographSpec.from_dict({"spread": []})
