"""A cheap but manipulable implementation of bundle menus.

The seller reveals the threshold one bit at a time. After each bit the buyer
either continues or stops and announces the payment bit and the bundle index.
Honest play reproduces the menu's outcome law. A buyer who has seen part of the
threshold can sometimes gain by announcing a different line's outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .dyadic import prefix, to_fraction, truncate
from .engine import BuyerNode, Leaf, Protocol, TauNode, log2_ceil
from .intervals import IntervalSet
from .menu import Menu, MenuLine, Valuation, best_response, zero_line
from .stream import BundleMenu, StreamProgram, _closure, bundle_program

INCONSISTENT = "inconsistent"


class AnnouncementInconsistent(ValueError):
    pass


def _possible_outcomes(prog: StreamProgram, cell: IntervalSet) -> set[tuple[int, Fraction]]:
    out = set()
    for line in range(len(prog)):
        for key, _ in prog.exact_partition(line, cell):
            out.add(prog.outcome(key))
    return out


def compile_nonic(bm: BundleMenu) -> Protocol:
    prog = bundle_program(bm)
    width = log2_ceil(bm.B)
    everyone = frozenset(range(len(prog)))

    def reveal(k: int, a: int):
        cell = IntervalSet.cells([a], k)
        halves = [IntervalSet.cells([2 * a], k + 1), IntervalSet.cells([2 * a + 1], k + 1)]
        return TauNode(
            halves,
            lambda b: decide(k + 1, 2 * a + b),
            {"kind": "reveal", "k": k + 1},
            closure=_closure(prog, everyone, cell),
        )

    def decide(k: int, a: int):
        def expand(stop):
            return announce_pay(k, a) if stop else reveal(k, a)

        return BuyerNode((0, 1), expand, {"kind": "stop", "k": k, "cell": a})

    def announce_pay(k, a):
        return BuyerNode((0, 1), lambda pay: announce_bundle(k, a, pay, 0, 0), {"kind": "pay", "k": k, "cell": a})

    def announce_bundle(k, a, pay, j, idx):
        if j == width:
            alloc, payment = bm.bundles[idx], bm.U if pay else Fraction(0)
            flags = ()
            if (alloc, payment) not in _possible_outcomes(prog, IntervalSet.cells([a], k)):
                flags = (INCONSISTENT,)
            return Leaf(alloc, payment, flags)
        ok = [b for b in (0, 1) if ((idx << 1) | b) << (width - j - 1) < bm.B]
        return BuyerNode(ok, lambda b: announce_bundle(k, a, pay, j + 1, (idx << 1) | b), {"kind": "bundle_bit", "k": k, "cell": a, "bit": j})

    p = Protocol(lambda: reveal(0, 0), bm.n_items, bm.U, name="nonic", meta={"program": prog, "nonic": True})
    menu = bm.to_menu()
    p.meta["menu"] = menu
    p.meta["honest"] = lambda v: NonicStrategy(prog, best_response(v, menu))
    return p


class NonicStrategy:
    """Stop once the revealed prefix separates from every coordinate of the line; announce truthfully."""

    def __init__(self, prog: StreamProgram, line: int):
        self.prog = prog
        self.line = line
        self.width = log2_ceil(len(prog.bundles))

    def _cmp(self, k: int, a: int):
        return [prefix(c, k) for c in self.prog.coords[self.line]]

    def __call__(self, node, history):
        info = node.info
        kind = info["kind"]
        if kind == "commit":
            return self.line
        k, a = info["k"], info["cell"]
        pre = self._cmp(k, a)
        if kind == "stop":
            return int(all(p != a for p in pre))
        above = [p > a for p in pre]
        if kind == "pay":
            return int(above[-1])
        if kind == "bundle_bit":
            idx = sum(1 for x in above[:-1] if not x)
            return (idx >> (self.width - 1 - info["bit"])) & 1
        raise ValueError(f"unexpected node {info}")


def single_item_bundle_menu(lines) -> BundleMenu:
    """Single-item menu from ``(allocation probability, payment)`` pairs; U = 1."""
    ml = [zero_line(1)] + [MenuLine.bundles({1: q, 0: 1 - q}, pay) for q, pay in lines if q or pay]
    return BundleMenu.from_menu(Menu(1, Fraction(1), tuple(ml)), order=(1, 0))


def q_squared_menu(k: int = 3, bits: int = 20) -> BundleMenu:
    """The menu ``{(q, q^2)}`` on the grid ``q = j / 2^k``, payments truncated to ``bits`` bits."""
    qs = [Fraction(j, 1 << k) for j in range(1, (1 << k) + 1)]
    return single_item_bundle_menu([(q, truncate(q * q, bits)) for q in qs])


def conditional_utility(v, q, p, lo, hi, U=1) -> Fraction:
    """Utility of the line (item iff tau < q, pay U iff tau < p) given tau uniform on [lo, hi)."""
    v, q, p, lo, hi, U = map(to_fraction, (v, q, p, lo, hi, U))
    w = hi - lo

    def below(x):
        return min(max(x - lo, Fraction(0)), w) / w

    return v * below(q) - U * below(p)


@dataclass
class CheatReport:
    value: Fraction
    honest_line: tuple[Fraction, Fraction]
    deviation_line: tuple[Fraction, Fraction]
    honest_low: Fraction
    deviation_low: Fraction
    honest_high: Fraction
    deviation_high: Fraction

    @property
    def gap(self) -> Fraction:
        return self.deviation_low - self.honest_low

    @property
    def improves(self) -> bool:
        return self.gap > 0

    def to_json(self) -> dict:
        s = str
        return {
            "value": s(self.value),
            "honest_line": [s(x) for x in self.honest_line],
            "deviation_line": [s(x) for x in self.deviation_line],
            "after_first_bit_0": {"honest": s(self.honest_low), "deviation": s(self.deviation_low), "gap": s(self.gap)},
            "after_first_bit_1": {"honest": s(self.honest_high), "deviation": s(self.deviation_high)},
            "deviation_improves": self.improves,
        }


def demonstrate_cheat(value=Fraction(4, 3), deviation=(Fraction(1, 2), Fraction(1, 4))) -> CheatReport:
    """Menu ``{(q, q^2)}`` with ``U = 1``: exact utilities once the first threshold bit is known."""
    v = to_fraction(value)
    q = min(max(v / 2, Fraction(0)), Fraction(1))
    honest = (q, q * q)
    dq, dp = map(to_fraction, deviation)
    half = Fraction(1, 2)
    return CheatReport(
        v,
        honest,
        (dq, dp),
        conditional_utility(v, *honest, 0, half),
        conditional_utility(v, dq, dp, 0, half),
        conditional_utility(v, *honest, half, 1),
        conditional_utility(v, dq, dp, half, 1),
    )
