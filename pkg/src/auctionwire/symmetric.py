"""Two-stage compiler for partition-symmetric unit-demand menus.

Stage one: the buyer names a line and Chance draws a part of that line's partition
(or the no-item branch). Stage two: the buyer repeatedly reports the probability
histogram of the first half of the surviving items and Chance keeps that half with
probability proportional to its mass, until one item is left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

from .dyadic import fraction_str, to_fraction
from .engine import BuyerNode, ChanceNode, InfeasiblePrefix, Leaf, Protocol, log2_ceil
from .menu import Menu, MenuLine, Valuation


class HistogramMismatch(InfeasiblePrefix):
    pass


def grid_values(delta: Fraction, n: int) -> tuple[Fraction, ...]:
    """Allowed probabilities ``1, (1-d), (1-d)^2, ...`` down to exponent ``ceil(3 ln(n) / d)``, then 0."""
    K = math.ceil(3 * math.log(n) / delta) if n > 1 else 0
    q = 1 - delta
    return tuple(q**k for k in range(K + 1)) + (Fraction(0),)


Histogram = dict  # grid index -> count


def hist_mass(h: Mapping[int, int], grid: Sequence[Fraction]) -> Fraction:
    return sum((grid[g] * c for g, c in h.items()), Fraction(0))


@dataclass(frozen=True)
class SymMenuLine:
    payment: Fraction
    partition: tuple[tuple[int, ...], ...]
    histograms: tuple[tuple[tuple[int, int], ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "payment", to_fraction(self.payment))
        object.__setattr__(self, "partition", tuple(tuple(sorted(s)) for s in self.partition))
        hs = []
        for h in self.histograms:
            items = h.items() if isinstance(h, Mapping) else h
            hs.append(tuple(sorted((int(g), int(c)) for g, c in items if c)))
        object.__setattr__(self, "histograms", tuple(hs))
        if len(self.partition) != len(self.histograms):
            raise ValueError("one histogram per part")
        for part, h in zip(self.partition, self.histograms):
            if sum(c for _, c in h) != len(part):
                raise ValueError("histogram counts must add up to the part size")

    def hist(self, i: int) -> dict[int, int]:
        return dict(self.histograms[i])


@dataclass(frozen=True)
class SymMenu:
    n: int
    delta: Fraction
    lines: tuple[SymMenuLine, ...]

    def __post_init__(self):
        object.__setattr__(self, "delta", to_fraction(self.delta))
        if not self.lines:
            raise ValueError("a menu needs at least one line")
        grid = self.grid
        for line in self.lines:
            items = sorted(i for part in line.partition for i in part)
            if items != list(range(self.n)):
                raise ValueError("each partition must cover the items exactly once")
            for h in line.histograms:
                if any(g >= len(grid) for g, _ in h):
                    raise ValueError("grid index out of range")
            if self.line_mass(line) > 1:
                raise ValueError("a line allocates total mass above 1")
        if not any(self.is_zero(l) for l in self.lines):
            raise ValueError("the menu must contain the zero line")

    @property
    def grid(self) -> tuple[Fraction, ...]:
        return grid_values(self.delta, self.n)

    def line_mass(self, line: SymMenuLine) -> Fraction:
        return sum((hist_mass(line.hist(i), self.grid) for i in range(len(line.partition))), Fraction(0))

    def is_zero(self, line: SymMenuLine) -> bool:
        return line.payment == 0 and self.line_mass(line) == 0

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "delta": fraction_str(self.delta),
            "lines": [
                {
                    "payment": fraction_str(l.payment),
                    "partition": [list(p) for p in l.partition],
                    "histograms": [{str(g): c for g, c in h} for h in l.histograms],
                }
                for l in self.lines
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "SymMenu":
        lines = tuple(
            SymMenuLine(
                to_fraction(l["payment"]),
                tuple(tuple(p) for p in l["partition"]),
                tuple(tuple((int(g), int(c)) for g, c in h.items()) for h in l["histograms"]),
            )
            for l in obj["lines"]
        )
        n = obj.get("n", sum(len(p) for p in obj["lines"][0]["partition"]))
        return cls(int(n), to_fraction(obj["delta"]), lines)


def compile_symmetric(sm: SymMenu) -> Protocol:
    grid = sm.grid
    C = len(sm.lines)
    width = log2_ceil(C)

    def choose(prefix: int, j: int):
        if j == width:
            return stage_one(prefix)
        ok = [b for b in (0, 1) if ((prefix << 1) | b) << (width - j - 1) < C]
        return BuyerNode(ok, lambda b: choose((prefix << 1) | b, j + 1), {"kind": "line_bit", "bit": j})

    def stage_one(k: int):
        line = sm.lines[k]
        masses = [hist_mass(line.hist(i), grid) for i in range(len(line.partition))]
        residual = 1 - sum(masses, Fraction(0))
        kids = [(m, lambda i=i: halve(line, tuple(line.partition[i]), line.hist(i))) for i, m in enumerate(masses) if m]
        if residual:
            kids.append((residual, lambda: Leaf(0, line.payment, ("no_item",))))
        return ChanceNode([w for w, _ in kids], lambda i: kids[i][1](), {"kind": "part", "line": k})

    def halve(line: SymMenuLine, cur: tuple[int, ...], h: dict[int, int]):
        if len(cur) == 1:
            return Leaf(1 << cur[0], line.payment)
        left, right = cur[: (len(cur) + 1) // 2], cur[(len(cur) + 1) // 2 :]
        keys = sorted(h)
        return report(line, cur, left, right, h, keys, 0, {})

    def report(line, cur, left, right, h, keys, pos, sub):
        need = len(left) - sum(sub.values())
        if pos == len(keys):
            return split(line, left, right, h, sub)
        g = keys[pos]
        later = sum(h[k] for k in keys[pos + 1 :])
        lo, hi = max(0, need - later), min(h[g], need)
        allowed = list(range(lo, hi + 1))

        def expand(c):
            if not lo <= c <= hi:
                raise HistogramMismatch(f"count {c} for grid {g} outside [{lo}, {hi}]")
            return report(line, cur, left, right, h, keys, pos + 1, {**sub, g: c})

        info = {"kind": "hist", "grid": g, "left": left, "cur": cur}
        return BuyerNode(allowed, expand, info)

    def split(line, left, right, h, sub):
        sub = {g: c for g, c in sub.items() if c}
        rest = {g: h[g] - sub.get(g, 0) for g in h if h[g] - sub.get(g, 0)}
        total = hist_mass(h, grid)
        wl = hist_mass(sub, grid) / total
        kids = (lambda: halve(line, left, sub), lambda: halve(line, right, rest))
        return ChanceNode([wl, 1 - wl], lambda i: kids[i](), {"kind": "halve"})

    p = Protocol(lambda: choose(0, 0), sm.n, max(l.payment for l in sm.lines) or Fraction(1), name="symmetric", meta={"symmenu": sm})

    def honest(v):
        k, assignment, _ = best_symmetric_response(sm, v)
        return SymmetricStrategy(sm, k, assignment)

    p.meta["honest"] = honest
    return p


class SymmetricStrategy:
    def __init__(self, sm: SymMenu, line: int, assignment: Mapping[int, int]):
        self.sm = sm
        self.line = line
        self.assignment = dict(assignment)
        width = log2_ceil(len(sm.lines))
        self.width = width
        line_obj = sm.lines[line]
        for part, h in zip(line_obj.partition, line_obj.histograms):
            got: dict[int, int] = {}
            for i in part:
                got[self.assignment[i]] = got.get(self.assignment[i], 0) + 1
            if sorted(got.items()) != list(h):
                raise HistogramMismatch("assignment does not reproduce the line's histogram")

    def __call__(self, node, history):
        info = node.info
        if info["kind"] == "line_bit":
            return (self.line >> (self.width - 1 - info["bit"])) & 1
        if info["kind"] == "hist":
            return sum(1 for i in info["left"] if self.assignment[i] == info["grid"])
        raise InfeasiblePrefix(f"no honest move at {info}")


def honest_strategy_symmetric(sm: SymMenu, assignment: Mapping[int, int], line: int | None = None) -> SymmetricStrategy:
    if line is None:
        line = next(k for k, l in enumerate(sm.lines) if _matches(l, assignment))
    return SymmetricStrategy(sm, line, assignment)


def _matches(line: SymMenuLine, assignment: Mapping[int, int]) -> bool:
    for part, h in zip(line.partition, line.histograms):
        got: dict[int, int] = {}
        for i in part:
            got[assignment[i]] = got.get(assignment[i], 0) + 1
        if sorted(got.items()) != list(h):
            return False
    return True


def best_assignment(sm: SymMenu, k: int, v: Valuation) -> tuple[dict[int, int], Fraction]:
    """Utility-maximizing assignment of ``k``'s histograms to items, and its utility."""
    grid = sm.grid
    line = sm.lines[k]
    assignment: dict[int, int] = {}
    value = Fraction(0)
    for part, h in zip(line.partition, line.histograms):
        slots = sorted((g for g, c in h for _ in range(c)), key=lambda g: (-grid[g], g))
        items = sorted(part, key=lambda i: (-v.values[i], i))
        for i, g in zip(items, slots):
            assignment[i] = g
            value += grid[g] * v.values[i]
    return assignment, value - line.payment


def best_symmetric_response(sm: SymMenu, v: Valuation) -> tuple[int, dict[int, int], Fraction]:
    best = None
    for k in range(len(sm.lines)):
        a, u = best_assignment(sm, k, v)
        if best is None or u > best[2]:
            best = (k, a, u)
    return best


def symmetric_line_as_menu_line(sm: SymMenu, k: int, assignment: Mapping[int, int]) -> MenuLine:
    grid = sm.grid
    dist = {1 << i: grid[g] for i, g in assignment.items() if grid[g]}
    dist[0] = 1 - sum(dist.values(), Fraction(0))
    return MenuLine.bundles(dist, sm.lines[k].payment)


def sym_menu_from_lines(n: int, delta, lines: Sequence[tuple[Any, Sequence[Sequence[int]], Sequence[Mapping[int, int]]]]) -> SymMenu:
    return SymMenu(n, to_fraction(delta), tuple(SymMenuLine(to_fraction(p), tuple(map(tuple, parts)), tuple(tuple(h.items()) for h in hs)) for p, parts, hs in lines))


__all__ = [
    "HistogramMismatch",
    "SymMenu",
    "SymMenuLine",
    "best_symmetric_response",
    "compile_symmetric",
    "grid_values",
    "honest_strategy_symmetric",
    "sym_menu_from_lines",
]
