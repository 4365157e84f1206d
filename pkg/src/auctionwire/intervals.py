"""Finite unions of half-open intervals with rational endpoints.

These describe what is known about the hidden threshold at a Chance node.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

Span = tuple[Fraction, Fraction]


class IntervalSet:
    __slots__ = ("spans",)

    def __init__(self, spans: Iterable[tuple] = ()):
        items = sorted((Fraction(lo), Fraction(hi)) for lo, hi in spans)
        merged: list[list[Fraction]] = []
        for lo, hi in items:
            if hi <= lo:
                continue
            if merged and lo <= merged[-1][1]:
                if hi > merged[-1][1]:
                    merged[-1][1] = hi
            else:
                merged.append([lo, hi])
        self.spans: tuple[Span, ...] = tuple((lo, hi) for lo, hi in merged)

    @classmethod
    def unit(cls) -> "IntervalSet":
        return cls([(Fraction(0), Fraction(1))])

    @classmethod
    def cells(cls, cells: Iterable[int], r: int) -> "IntervalSet":
        """Union of the dyadic cells ``[a/2^r, (a+1)/2^r)``."""
        d = 1 << r
        return cls((Fraction(a, d), Fraction(a + 1, d)) for a in cells)

    def measure(self) -> Fraction:
        return sum((hi - lo for lo, hi in self.spans), Fraction(0))

    def is_empty(self) -> bool:
        return not self.spans

    def __bool__(self) -> bool:
        return bool(self.spans)

    def __or__(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(self.spans + other.spans)

    def __and__(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        i = j = 0
        a, b = self.spans, other.spans
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo < hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet(out)

    def __sub__(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        for lo, hi in self.spans:
            cur = lo
            for olo, ohi in other.spans:
                if ohi <= cur or olo >= hi:
                    continue
                if olo > cur:
                    out.append((cur, olo))
                cur = max(cur, ohi)
                if cur >= hi:
                    break
            if cur < hi:
                out.append((cur, hi))
        return IntervalSet(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self.spans == other.spans

    def __hash__(self) -> int:
        return hash(self.spans)

    def __repr__(self) -> str:
        body = ", ".join(f"[{lo}, {hi})" for lo, hi in self.spans)
        return f"IntervalSet({body})"

    def overlaps_cell(self, a: int, k: int) -> bool:
        """Does the set meet ``[a/2^k, (a+1)/2^k)`` in positive measure?"""
        for lo, hi in self.spans:
            # lo < (a+1)/2^k and hi > a/2^k, in integers
            if lo.numerator << k < (a + 1) * lo.denominator and hi.numerator << k > a * hi.denominator:
                return True
        return False

    def split_at(self, points: Sequence[Fraction]) -> list[Span]:
        """Pieces of the set cut at every point in ``points``."""
        cuts = sorted(set(points))
        out = []
        for lo, hi in self.spans:
            cur = lo
            for p in cuts:
                if cur < p < hi:
                    out.append((cur, p))
                    cur = p
            out.append((cur, hi))
        return out

    def affine(self, offset: Fraction, scale: Fraction) -> "IntervalSet":
        """Image under ``t -> offset + scale * t`` (``scale > 0``)."""
        return IntervalSet((offset + scale * lo, offset + scale * hi) for lo, hi in self.spans)
