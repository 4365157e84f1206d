import random
from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from auctionwire.menu import (
    FormMismatch,
    Menu,
    MenuError,
    MenuLine,
    Prior,
    Valuation,
    best_response,
    normalize_payments,
    random_menu,
    utility,
    zero_line,
)

from conftest import additive_menus, additive_valuations


def test_normalize_examples():
    m = Menu(1, F(1), (zero_line(1), MenuLine.items([1], 0.5535)))
    assert normalize_payments(m).lines[1].pay_prob == F(0.5535)
    m2 = Menu(1, F(2), (zero_line(1), MenuLine.items([1], F(1, 5))))
    assert normalize_payments(m2).lines[1].pay_prob == F(1, 10)
    assert normalize_payments(m2).lines[0].pay_prob == 0


def test_utility_examples():
    assert utility(Valuation.additive([1, 1]), MenuLine.items([F(1, 2), F(1, 2)], F(3, 10))) == F(7, 10)
    ud = Valuation.unit_demand([1, F(1, 2)])
    assert utility(ud, MenuLine.bundles({0: F(1, 2), 2: F(1, 2)}, F(1, 4))) == 0
    assert utility(ud, zero_line(2)) == 0
    with pytest.raises(FormMismatch):
        utility(ud, MenuLine.items([1, 0], 0))


def test_unit_demand_bundle_example():
    # item index 0 is worth 1; bundle {item 0} w.p. 1/2 at price 1/4
    ud = Valuation.unit_demand([1, F(1, 2)])
    assert utility(ud, MenuLine.bundles({0: F(1, 2), 1: F(1, 2)}, F(1, 4))) == F(1, 4)


def test_best_response_examples():
    m = Menu(1, F(1), (zero_line(1), MenuLine.items([1], F(1, 2)), MenuLine.items([F(1, 2)], F(1, 10))))
    assert best_response(Valuation.additive([1]), m) == 1
    assert best_response(Valuation.additive([0]), m) == 0
    tie = Menu(1, F(1), (zero_line(1), MenuLine.items([1], F(1, 2)), MenuLine.items([F(1, 2)], 0)))
    assert best_response(Valuation.additive([1]), tie) == 1


def test_menu_validation():
    with pytest.raises(MenuError):
        Menu(1, F(1), (MenuLine.items([1], F(1, 2)),))
    with pytest.raises(MenuError):
        Menu(1, F(1), (zero_line(1), zero_line(1)))
    with pytest.raises(MenuError):
        MenuLine.bundles({1: F(1, 2)}, 0)
    with pytest.raises(MenuError):
        Menu(1, F(0), (zero_line(1),))


def test_valuation_classes():
    x = Valuation.xos([[1, 0, F(1, 2)], [0, F(3, 4), F(1, 4)]])
    assert x.value(0b101) == F(3, 2)
    assert x.value(0b110) == F(1)
    assert Valuation.unit_demand([1, 3, 2]).value(0b101) == 2
    assert Valuation.additive([1, 3, 2]).grand_value() == 6


@given(additive_menus(), st.data())
def test_best_response_is_ir(m, data):
    v = data.draw(additive_valuations(m.n_items))
    assert utility(v, m.lines[best_response(v, m)]) >= 0


@given(additive_menus())
def test_normalize_round_trip(m):
    assert normalize_payments(m).denormalize() == m


@given(additive_menus(), st.data())
def test_dominated_line_does_not_change_choice(m, data):
    v = data.draw(additive_valuations(m.n_items))
    k = best_response(v, m)
    # a line that gives nothing and charges something is never chosen
    extra = MenuLine.items([0] * m.n_items, F(1, 64))
    m2 = Menu(m.n_items, m.U, m.lines + (extra,))
    assert best_response(v, m2) == k


def test_json_round_trip(tmp_path):
    m = random_menu(random.Random(3), 3, 6, kind="bundles")
    assert Menu.from_json(m.to_json()) == m
    p = Prior.uniform([Valuation.unit_demand([1, 0, F(1, 2)]), Valuation.xos([[1, 1, 0]])])
    assert Prior.from_json(p.to_json()) == p
