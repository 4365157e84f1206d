import random
from fractions import Fraction as F

import pytest

from auctionwire.audit import ENode, ExplicitTree, random_tree, tree_best_response, with_opt_out
from auctionwire.engine import run
from auctionwire.expost import (
    ReportOutOfRange,
    expost_strategy,
    max_wrapper_bits,
    report_bits,
    wrap_expost_ir,
    wrapper_bit_bound,
)
from auctionwire.menu import Valuation

EPS = F(1, 1024)


def realized(wrapped, tree, v, seed):
    s = expost_strategy(wrapped, tree_best_response(tree, v).strategy(), v)
    tr = run(wrapped, s, seed=seed)
    return tr, v.value(tr.alloc) - tr.payment


def test_deterministic_tree_only_reports_ubar():
    t = ExplicitTree(ENode.buyer([ENode.leaf(1, F(1, 4)), ENode.leaf(0, 0)]), 1, F(1))
    w = wrap_expost_ir(t, EPS, 1)
    v = Valuation.additive([1])
    tr, u = realized(w, t, v, 0)
    assert tr.payment == F(1, 4) and u == tr.extra["ubar"] == F(3, 4)
    assert tr.extra["wrapper_bits"] == w.meta["L"] + 1


def test_fair_coin_hedge():
    t = ExplicitTree(ENode.chance([ENode.leaf(1, 0), ENode.leaf(0, 0)], [F(1, 2), F(1, 2)]), 1, F(1))
    w = wrap_expost_ir(t, EPS, 1)
    v = Valuation.additive([1])
    pays = set()
    for seed in range(30):
        tr, u = realized(w, t, v, seed)
        assert u == F(1, 2)
        pays.add((tr.alloc, tr.payment))
    assert pays == {(1, F(1, 2)), (0, F(-1, 2))}


def test_regret_within_eps_on_random_trees():
    rng = random.Random(8)
    for _ in range(5):
        t = with_opt_out(random_tree(rng, n_items=2, max_depth=4, max_leaves=12, p_chance=0.6))
        v = Valuation.additive([F(rng.randrange(5), 4), F(rng.randrange(5), 4)])
        U = max(F(1), v.grand_value())
        w = wrap_expost_ir(t, EPS, U)
        ubar_true = tree_best_response(t, v).value
        for seed in range(20):
            tr, u = realized(w, t, v, seed)
            assert abs(u - tr.extra["ubar"]) <= EPS
            assert abs(tr.extra["ubar"] - ubar_true) <= EPS


def test_bit_bound():
    rng = random.Random(2)
    for _ in range(10):
        t = random_tree(rng, n_items=2, max_depth=5, max_leaves=20, p_chance=0.5)
        C = t.chance_nodes()
        if C >= 2:
            assert max_wrapper_bits(t, 1, EPS) <= wrapper_bit_bound(C, 1, EPS)
    assert report_bits(10, 1, 2) == 13


def test_out_of_range_report():
    t = ExplicitTree(ENode.chance([ENode.leaf(1, 0), ENode.leaf(0, 0)], [F(1, 4), F(3, 4)]), 1, F(1))
    w = wrap_expost_ir(t, F(1, 4), 1)

    def greedy(node, history):
        # maximal Ubar, minimal report for the light child: the implied heavy report is 3 > 2
        return 1 if node.info["kind"] == "ubar" else 0

    with pytest.raises(ReportOutOfRange):
        for seed in range(10):
            run(w, greedy, seed=seed)


def test_negative_utility_rejected():
    t = ExplicitTree(ENode.leaf(1, 1), 1, F(1))
    w = wrap_expost_ir(t, EPS, 1)
    v = Valuation.additive([0])
    with pytest.raises(ReportOutOfRange):
        realized(w, t, v, 0)
