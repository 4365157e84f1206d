from fractions import Fraction as F

import pytest

from auctionwire.audit import ic_audit, outcome_law, revenue_audit, materialize
from auctionwire.hard import (
    UNIT_DEMAND_PRESETS,
    XOS_PRESETS,
    EqualRevenueDist,
    ParameterGuard,
    WeakDesign,
    DesignFailure,
    check_unit_demand_guard,
    check_xos_guard,
    deviation_table,
    gen_weak_design,
    nontruthful_impl_unit_demand,
    optimal_protocol_unit_demand,
    optimal_protocol_xos,
    sample_code_vectors,
    unit_demand_family,
    xos_family,
)
from auctionwire.menu import popcount


def test_weak_design_example():
    d = gen_weak_design(64, F(1, 4), F(1, 2), 8, seed=1)
    d.verify()
    assert len(d.sets) == 8 and all(popcount(s) == 16 for s in d.sets)
    assert d.max_intersection() <= d.intersection_bound == 6


def test_single_set_design():
    d = gen_weak_design(16, F(1, 4), F(1, 4), 1, seed=0)
    assert len(d.sets) == 1


def test_design_verify_catches_overlap():
    with pytest.raises(DesignFailure):
        WeakDesign(8, F(1, 2), F(0), (0b1111, 0b0111 | 0b10000)).verify()


def test_equal_revenue():
    d = EqualRevenueDist(2, F(1, 2))
    assert d.values == (1, F(1, 2)) and d.probs == (F(1, 3), F(2, 3))
    assert [v * p for v, p in zip(d.values, d.probs)] == [F(1, 3), F(1, 3)]
    assert len(sample_code_vectors(8, 2, F(1, 2), 1, seed=0)) == 1


def test_guards():
    check_unit_demand_guard(F(1, 10), F(1, 10), F(1, 2), 2, F(1, 10))
    with pytest.raises(ParameterGuard):
        check_unit_demand_guard(F(1, 4), F(1, 2), F(1, 2), 2, F(1, 10))
    check_xos_guard(F(1, 50), F(1, 10), F(1, 50), F(1, 10), F(1, 5))
    with pytest.raises(ParameterGuard):
        check_xos_guard(F(1, 4), F(1, 4), F(1, 4), F(1, 4), F(1, 5))


@pytest.mark.parametrize("n", [16, 32])
def test_unit_demand_optimal_is_ic_and_full_revenue(n):
    hp = unit_demand_family(UNIT_DEMAND_PRESETS[n], 2, seed=n)[0]
    p = optimal_protocol_unit_demand(hp)
    for row in deviation_table(hp, p):
        assert row.best_design_deviation < row.honest == 0
        assert row.worst_margin <= 0
        assert row.off_design == 0
    # deviation bound at the preset: 0.11 c(x) - c(x') <= 0.11 - 0.5
    assert max(r.best_design_deviation for r in deviation_table(hp, p)) <= F(11, 100) - F(1, 2)
    t = materialize(p)
    assert revenue_audit(t, [hp])["fractions"] == [1]


def test_short_implementation_same_law_not_ic():
    hp = unit_demand_family(UNIT_DEMAND_PRESETS[16], 1, seed=3)[0]
    opt, short = optimal_protocol_unit_demand(hp), nontruthful_impl_unit_demand(hp)
    for w, v in hp.prior:
        assert outcome_law(opt, opt.meta["honest"](v)) == outcome_law(short, short.meta["honest"](v))
    assert ic_audit(short, hp.prior).verdict == "non-IC"
    assert ic_audit(opt, hp.prior).verdict == "IC"


def test_short_implementation_bit_count():
    hp = unit_demand_family(UNIT_DEMAND_PRESETS[16], 1, seed=3)[0]
    from auctionwire.engine import run

    w, v = hp.prior.types[0]
    tr = run(nontruthful_impl_unit_demand(hp), nontruthful_impl_unit_demand(hp).meta["honest"](v), seed=0)
    assert tr.n_buyer_bits == 4 + 1


def test_xos_optimal_is_ic():
    hp = xos_family(XOS_PRESETS[16], 1, seed=5)[0]
    p = optimal_protocol_xos(hp)
    for row in deviation_table(hp, p):
        assert row.best_design_deviation < row.honest == 0 and row.worst_margin <= 0
    assert revenue_audit(materialize(p), [hp])["fractions"] == [1]
