import math
from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from auctionwire.audit import outcome_law
from auctionwire.engine import BuyerNode, ChanceNode, Leaf
from auctionwire.menu import Valuation
from auctionwire.symmetric import (
    HistogramMismatch,
    SymmetricStrategy,
    best_symmetric_response,
    compile_symmetric,
    grid_values,
    hist_mass,
    sym_menu_from_lines,
)
from auctionwire.audit import mc_outcome

HALF = F(1, 2)


def grid_index(delta, n, value):
    return grid_values(delta, n).index(value)


def four_item_menu():
    # conditional rates 2 : 1 : 1 : 0 over one part
    g = grid_values(HALF, 4)
    z = len(g) - 1
    return sym_menu_from_lines(4, HALF, [(0, [[0, 1, 2, 3]], [{z: 4}]), (F(1, 8), [[0, 1, 2, 3]], [{1: 1, 2: 2, z: 1}])])


def item_rates(law, n):
    out = [F(0)] * n
    for (a, _), q in law.items():
        for i in range(n):
            if a >> i & 1:
                out[i] += q
    return out


def test_grid_values():
    g = grid_values(HALF, 4)
    assert g[:3] == (1, HALF, F(1, 4)) and g[-1] == 0
    assert len(g) == math.ceil(3 * math.log(4) / 0.5) + 2


def test_singleton_part_costs_no_stage_two_bits():
    sm = sym_menu_from_lines(1, HALF, [(0, [[0]], [{len(grid_values(HALF, 1)) - 1: 1}]), (F(1, 2), [[0]], [{0: 1}])])
    p = compile_symmetric(sm)
    from auctionwire.engine import run

    tr = run(p, SymmetricStrategy(sm, 1, {0: 0}), seed=0)
    assert tr.alloc == 1 and tr.payment == F(1, 2) and tr.n_buyer_bits == 1


def test_exact_law_scaled_example():
    sm = four_item_menu()
    s = SymmetricStrategy(sm, 1, {0: 1, 1: 2, 2: 2, 3: len(sm.grid) - 1})
    law = outcome_law(compile_symmetric(sm), s)
    assert item_rates(law, 4) == [HALF, F(1, 4), F(1, 4), 0]
    assert sum(q * pay for (_, pay), q in law.items()) == F(1, 8)


def test_mc_conditional_rates():
    sm = four_item_menu()
    s = SymmetricStrategy(sm, 1, {0: 1, 1: 2, 2: 2, 3: len(sm.grid) - 1})
    st_ = mc_outcome(compile_symmetric(sm), s, 100_000, seed=4)
    got = sum(st_.item_freq)
    for i, want in enumerate((HALF, F(1, 4), F(1, 4), F(0))):
        cond = st_.item_freq[i] / got
        q = float(want / sum((HALF, F(1, 4), F(1, 4))))
        assert abs(cond - q) <= 3 * math.sqrt(q * (1 - q) / (got * 100_000)) + 1e-12


def test_point_mass_navigates_to_item():
    g = grid_values(HALF, 4)
    z = len(g) - 1
    sm = sym_menu_from_lines(4, HALF, [(0, [[0, 1, 2, 3]], [{z: 4}]), (HALF, [[0, 1, 2, 3]], [{0: 1, z: 3}])])
    for j in range(4):
        a = {i: (0 if i == j else z) for i in range(4)}
        law = outcome_law(compile_symmetric(sm), SymmetricStrategy(sm, 1, a))
        assert law == {(1 << j, HALF): 1}


def test_assignment_must_match_histogram():
    sm = four_item_menu()
    with pytest.raises(HistogramMismatch):
        SymmetricStrategy(sm, 1, {0: 1, 1: 1, 2: 2, 3: 2})


def test_mass_above_one_rejected():
    with pytest.raises(ValueError):
        sym_menu_from_lines(2, HALF, [(0, [[0, 1]], [{len(grid_values(HALF, 2)) - 1: 2}]), (0, [[0, 1]], [{0: 2}])])


def walk_conservation(sm, node, h, depth=0):
    """Check left + right histograms equal the parent one at every halving step."""
    checked = 0
    if isinstance(node, Leaf) or depth > 40:
        return 0
    if isinstance(node, BuyerNode) and node.info["kind"] == "hist":
        for c in node.allowed:
            checked += walk_hist(sm, node.expand(c), h, {node.info["grid"]: c}, depth)
        return checked
    if isinstance(node, BuyerNode):
        return sum(walk_conservation(sm, node.expand(c), h, depth + 1) for c in node.allowed)
    return checked


def walk_hist(sm, node, h, sub, depth):
    if isinstance(node, BuyerNode) and node.info["kind"] == "hist":
        return sum(walk_hist(sm, node.expand(c), h, {**sub, node.info["grid"]: c}, depth) for c in node.allowed)
    assert isinstance(node, ChanceNode) and node.info["kind"] == "halve"
    sub = {g: c for g, c in sub.items() if c}
    rest = {g: h[g] - sub.get(g, 0) for g in h}
    assert all(c >= 0 for c in rest.values())
    assert {g: sub.get(g, 0) + rest[g] for g in h} == h
    rest = {g: c for g, c in rest.items() if c}
    assert node.weights[0] == hist_mass(sub, sm.grid) / hist_mass(h, sm.grid)
    n = 1
    for i, child_h in enumerate((sub, rest)):
        if node.weights[i]:
            n += walk_conservation(sm, node.expand(i), child_h, depth + 1)
    return n


@given(st.lists(st.integers(0, 3), min_size=2, max_size=5))
def test_histogram_conservation(idx):
    n = len(idx)
    g = grid_values(HALF, n)
    counts = {}
    for k in idx:
        counts[k + 1] = counts.get(k + 1, 0) + 1
    if hist_mass(counts, g) > 1:
        return
    z = len(g) - 1
    sm = sym_menu_from_lines(n, HALF, [(0, [list(range(n))], [{z: n}]), (F(1, 4), [list(range(n))], [counts])])
    p = compile_symmetric(sm)
    root = p.start()
    node = root.expand(1) if root.info["kind"] == "line_bit" else root
    # stage one: a single part plus possibly the no-item residual
    first = node.expand(0)
    assert walk_conservation(sm, first, counts) >= 1


def test_best_symmetric_response_rearrangement():
    sm = four_item_menu()
    v = Valuation.unit_demand([0, 1, F(1, 2), F(1, 4)])
    k, a, u = best_symmetric_response(sm, v)
    assert k == 1 and a[1] == 1 and a[0] == len(sm.grid) - 1
    assert u == HALF * 1 + F(1, 4) * HALF + F(1, 4) * F(1, 4) - F(1, 8)
