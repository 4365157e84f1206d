import random
from fractions import Fraction

import pytest
from hypothesis import settings, strategies as st

from auctionwire.menu import Menu, MenuLine, Valuation, zero_line

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def dyadic(bits=6):
    return st.integers(0, 1 << bits).map(lambda k: Fraction(k, 1 << bits))


@st.composite
def additive_menus(draw, max_items=3, max_lines=5, bits=6):
    n = draw(st.integers(1, max_items))
    raw = draw(st.lists(st.tuples(st.lists(dyadic(bits), min_size=n, max_size=n), dyadic(bits)), min_size=1, max_size=max_lines - 1))
    lines = [zero_line(n)] + [MenuLine.items(p, pay) for p, pay in raw]
    return Menu(n, Fraction(1), tuple(dict.fromkeys(lines)))


@st.composite
def additive_valuations(draw, n, bits=4, top=2):
    return Valuation.additive(draw(st.lists(st.integers(0, top << bits).map(lambda k: Fraction(k, 1 << bits)), min_size=n, max_size=n)))


@pytest.fixture
def rng():
    return random.Random(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
