"""Threshold-streaming compilers for additive and bundle menus.

The buyer streams the binary expansions of the chosen line's coordinates one bit
per coordinate per round. After each round the seller draws enough bits of a
hidden uniform ``tau`` to tell whether every coordinate's prefix already differs
from tau's prefix; if so the run stops and each comparison ``coordinate > tau`` is
settled. Only the stopping event and the leaf are revealed.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .dyadic import NonDyadic, expansion_length, is_dyadic, prefix, to_fraction
from .engine import BuyerNode, InfeasiblePrefix, Leaf, Protocol, TauNode, run
from .intervals import IntervalSet
from .menu import (
    FormMismatch,
    Menu,
    MenuLine,
    NormalizedLine,
    NormalizedMenu,
    Valuation,
    best_response,
    normalize_payments,
    popcount,
)

ADDITIVE = "additive"
BUNDLE = "bundle"
_WORD = 64


def _check_dyadic(x: Fraction) -> Fraction:
    if not is_dyadic(x) and x != 1:
        raise NonDyadic(x)
    return x


@dataclass(frozen=True)
class BundleLine:
    boundaries: tuple[Fraction, ...]
    pay_prob: Fraction

    def bundle_probs(self) -> tuple[Fraction, ...]:
        edges = (Fraction(0),) + self.boundaries + (Fraction(1),)
        return tuple(edges[i + 1] - edges[i] for i in range(len(edges) - 1))


@dataclass(frozen=True)
class BundleMenu:
    """A menu over a shared ordered bundle list; each line cuts ``[0, 1)`` into intervals.

    Interval ``b`` has width equal to the probability of ``bundles[b]``.
    """

    n_items: int
    U: Fraction
    bundles: tuple[int, ...]
    lines: tuple[BundleLine, ...]

    def __post_init__(self):
        B = len(self.bundles)
        if B < 1:
            raise ValueError("a bundle menu needs at least one bundle")
        for line in self.lines:
            if len(line.boundaries) != B - 1:
                raise ValueError("each line needs exactly B - 1 boundaries")
            edges = (Fraction(0),) + line.boundaries + (Fraction(1),)
            if any(edges[i] > edges[i + 1] for i in range(B)):
                raise ValueError("boundaries must be non-decreasing in [0, 1]")

    @property
    def B(self) -> int:
        return len(self.bundles)

    def __len__(self) -> int:
        return len(self.lines)

    @classmethod
    def from_menu(cls, menu: Menu, order: Optional[Sequence[int]] = None) -> "BundleMenu":
        """Convert a menu whose lines carry bundle lotteries (the all-zero line may use item_probs)."""
        nm = normalize_payments(menu)
        dists = []
        for line in nm.lines:
            if line.bundle_dist is not None:
                dists.append(dict(line.bundle_dist))
            elif not any(line.item_probs):
                dists.append({0: Fraction(1)})
            else:
                raise FormMismatch("bundle menus need bundle_dist lines")
        if order is None:
            masks = {m for d in dists for m in d}
            order = sorted(masks, key=lambda m: (-popcount(m), m))
        order = tuple(order)
        pos = {m: i for i, m in enumerate(order)}
        lines = []
        for d, line in zip(dists, nm.lines):
            if set(d) - set(pos):
                raise ValueError("bundle order misses a bundle used by the menu")
            probs = [Fraction(0)] * len(order)
            for m, p in d.items():
                probs[pos[m]] += p
            acc, bounds = Fraction(0), []
            for p in probs[:-1]:
                acc += p
                bounds.append(acc)
            lines.append(BundleLine(tuple(bounds), line.pay_prob))
        return cls(menu.n_items, menu.U, order, tuple(lines))

    def to_menu(self) -> Menu:
        out = []
        for line in self.lines:
            dist = {}
            for m, p in zip(self.bundles, line.bundle_probs()):
                if p:
                    dist[m] = dist.get(m, Fraction(0)) + p
            out.append(MenuLine.bundles(dist, line.pay_prob * self.U))
        return Menu(self.n_items, self.U, tuple(out))


class StreamProgram:
    """Public data shared by both parties: per-line coordinates and how leaves are read."""

    def __init__(self, kind: str, n_items: int, U: Fraction, coords: Sequence[Sequence[Fraction]], bundles=()):
        self.kind = kind
        self.n_items = n_items
        self.U = U
        self.coords = tuple(tuple(_check_dyadic(to_fraction(c)) for c in line) for line in coords)
        self.bundles = tuple(bundles)
        self.n_coords = len(self.coords[0])

    def __len__(self) -> int:
        return len(self.coords)

    def bit(self, line: int, j: int, r: int) -> int:
        return prefix(self.coords[line][j], r) & 1

    def outcome(self, above: Sequence[bool]) -> tuple[int, Fraction]:
        """Leaf for a settled comparison vector (``above[j]``: coordinate ``j`` exceeds tau)."""
        pay = self.U if above[-1] else Fraction(0)
        if self.kind == ADDITIVE:
            alloc = 0
            for i in range(self.n_coords - 1):
                if above[i]:
                    alloc |= 1 << i
            return alloc, pay
        idx = sum(1 for a in above[:-1] if not a)
        return self.bundles[idx], pay

    def leaf(self, above: Sequence[bool]) -> Leaf:
        alloc, pay = self.outcome(above)
        return Leaf(alloc, pay)

    # -- partitions of the hidden set ---------------------------------------------------

    def _group(self, spans, cuts) -> list[tuple[tuple[bool, ...], IntervalSet]]:
        groups: dict[tuple[bool, ...], list] = {}
        for lo, hi in spans:
            key = tuple(c >= hi for c in cuts)
            groups.setdefault(key, []).append((lo, hi))
        return [(k, IntervalSet(v)) for k, v in sorted(groups.items())]

    def stop_partition(self, prefixes: Sequence[int], r: int, S: IntervalSet):
        """Continue part and the settled parts after round ``r``."""
        d = 1 << r
        lows = [Fraction(a, d) for a in prefixes]
        cover = IntervalSet((lo, lo + Fraction(1, d)) for lo in lows)
        cont = S & cover
        term = S - cover
        ends = lows + [lo + Fraction(1, d) for lo in lows]
        return cont, self._group(term.split_at(ends), lows)

    def exact_partition(self, line: int, S: IntervalSet):
        vals = self.coords[line]
        return self._group(S.split_at(list(vals)), vals)


def _closure(prog: StreamProgram, F: frozenset, S: IntervalSet):
    def commit():
        def after(line: int):
            groups = prog.exact_partition(line, S)
            leaves = [prog.leaf(k) for k, _ in groups]
            return TauNode([g for _, g in groups], leaves.__getitem__, {"kind": "settle", "line": line})

        return BuyerNode(sorted(F), after, {"kind": "commit"})

    return commit


def _build(prog: StreamProgram, name: str) -> Protocol:
    n = prog.n_coords

    def tau_node(r, prefixes, F, S):
        cont, groups = prog.stop_partition(prefixes, r, S)
        parts, kids = [], []
        if cont:
            parts.append(cont)
            kids.append(lambda: coord(r, 0, prefixes, (), F, cont))
        for key, g in groups:
            leaf = prog.leaf(key)
            parts.append(g)
            kids.append(lambda leaf=leaf: leaf)
        return TauNode(parts, lambda i: kids[i](), {"kind": "stop", "round": r}, closure=_closure(prog, F, S))

    def coord(r, j, old, new, F, S):
        if j == n:
            return tau_node(r + 1, new, F, S)
        by_bit: dict[int, list[int]] = {}
        for line in F:
            by_bit.setdefault(prog.bit(line, j, r + 1), []).append(line)

        def expand(b):
            if b not in by_bit:
                raise InfeasiblePrefix(f"bit {b} leaves no feasible line")
            return coord(r, j + 1, old, new + (((old[j] if old else 0) << 1) | b,), frozenset(by_bit[b]), S)

        return BuyerNode(sorted(by_bit), expand, {"kind": "coord", "round": r + 1, "coord": j})

    all_lines = frozenset(range(len(prog)))
    zeros = (0,) * n
    return Protocol(
        lambda: coord(0, 0, zeros, (), all_lines, IntervalSet.unit()),
        prog.n_items,
        prog.U,
        name=name,
        meta={"program": prog},
    )


def additive_program(m: NormalizedMenu) -> StreamProgram:
    coords = []
    for line in m.lines:
        if line.item_probs is None:
            raise FormMismatch("the additive compiler needs item_probs lines")
        coords.append(tuple(line.item_probs) + (line.pay_prob,))
    return StreamProgram(ADDITIVE, m.n_items, m.U, coords)


def bundle_program(bm: BundleMenu) -> StreamProgram:
    coords = [line.boundaries + (line.pay_prob,) for line in bm.lines]
    return StreamProgram(BUNDLE, bm.n_items, bm.U, coords, bm.bundles)


def _attach_honest(p: Protocol, menu: Menu) -> Protocol:
    prog = p.meta["program"]
    p.meta["menu"] = menu
    p.meta["honest"] = lambda v: LineStrategy(prog, best_response(v, menu))
    return p


def compile_additive(m: NormalizedMenu | Menu) -> Protocol:
    if isinstance(m, Menu):
        m = normalize_payments(m)
    menu = m.source if m.source is not None else m.denormalize()
    return _attach_honest(_build(additive_program(m), "additive-stream"), menu)


def compile_bundle(bm: BundleMenu) -> Protocol:
    return _attach_honest(_build(bundle_program(bm), "bundle-stream"), bm.to_menu())


class LineStrategy:
    """Stream one fixed line; at a commit node pick that line."""

    def __init__(self, prog: StreamProgram, line: int):
        self.prog = prog
        self.line = line

    def __call__(self, node, history):
        info = node.info
        if info.get("kind") == "coord":
            return self.prog.bit(self.line, info["coord"], info["round"])
        if info.get("kind") == "commit":
            return self.line
        raise InfeasiblePrefix(f"no honest move at {info}")


def honest_strategy_additive(m: NormalizedMenu | Menu, v: Valuation) -> LineStrategy:
    menu = m if isinstance(m, Menu) else m.denormalize()
    nm = normalize_payments(menu)
    return LineStrategy(additive_program(nm), best_response(v, menu))


def honest_strategy_bundle(bm: BundleMenu, v: Valuation) -> LineStrategy:
    return LineStrategy(bundle_program(bm), best_response(v, bm.to_menu()))


def exact_alloc_prob(line: MenuLine | NormalizedLine, U=None) -> tuple[Fraction, ...]:
    """Per-coordinate probabilities the compiled protocol realizes for ``line``: the line itself."""
    if isinstance(line, NormalizedLine):
        coords = tuple(line.item_probs) + (line.pay_prob,)
    else:
        coords = tuple(line.item_probs)
        if U is not None:
            coords += (line.payment / to_fraction(U),)
    for c in coords:
        _check_dyadic(c)
    return coords


def exact_expected_rounds(coords: Sequence) -> Fraction:
    """Expected number of rounds when streaming ``coords`` against a uniform threshold.

    Round ``r`` is reached iff tau's ``r``-prefix matches some coordinate's prefix, so
    the answer is the sum over ``r >= 0`` of the measure of the union of the prefix cells.
    Past the longest expansion the cells of distinct values are disjoint, which leaves
    a geometric tail.
    """
    if isinstance(coords, (MenuLine, NormalizedLine)):
        coords = exact_alloc_prob(coords)
    vals = sorted({_check_dyadic(to_fraction(c)) for c in coords})
    L = max(expansion_length(v) for v in vals)
    total = Fraction(0)
    for r in range(L + 1):
        d = 1 << r
        total += IntervalSet((Fraction(prefix(v, r), d), Fraction(prefix(v, r) + 1, d)) for v in vals).measure()
    return total + Fraction(len(vals), 1 << L)


def round_bound(n: int) -> float:
    """Fixed point of the round recurrence for ``n`` streamed coordinates."""
    import math

    return 2 * math.log2(n) * n / (n - 1)


# -- batched execution ---------------------------------------------------------------------


def _bit_length64(x: np.ndarray) -> np.ndarray:
    hi = (x >> np.uint64(32)).astype(np.float64)
    lo = (x & np.uint64(0xFFFFFFFF)).astype(np.float64)
    bl_hi = np.frexp(hi)[1]
    bl_lo = np.frexp(lo)[1]
    return np.where(hi > 0, bl_hi + 32, bl_lo).astype(np.int64)


def buyer_bit_schedule(prog: StreamProgram, line: int, rounds: int = _WORD) -> np.ndarray:
    """Cumulative count of non-forced buyer bits after each round when streaming ``line``."""
    F = set(range(len(prog)))
    cum = [0]
    for r in range(1, rounds + 1):
        sent = 0
        for j in range(prog.n_coords):
            if len(F) > 1:
                b = prog.bit(line, j, r)
                values = {prog.bit(l, j, r) for l in F}
                if len(values) > 1:
                    sent += 1
                F = {l for l in F if prog.bit(l, j, r) == b}
        cum.append(cum[-1] + sent)
    return np.asarray(cum, dtype=np.int64)


def tau_words(seed: int, trials: int) -> np.ndarray:
    return np.random.default_rng(seed).bit_generator.random_raw(trials).astype(np.uint64)


def run_stream_batch(p: Protocol, line: int, trials: int, seed: int, words: Optional[np.ndarray] = None) -> dict:
    """Many honest runs of a stream-compiled protocol for one fixed line, vectorized.

    Each run's threshold starts with one 64-bit word from ``tau_words(seed, trials)``.
    Runs whose threshold agrees with a coordinate on all 64 bits fall back to :func:`run`
    with the same first word.
    """
    prog: StreamProgram = p.meta["program"]
    T = tau_words(seed, trials) if words is None else np.asarray(words, dtype=np.uint64)
    coords = prog.coords[line]
    P = np.array([prefix(c, _WORD) for c in coords], dtype=np.uint64)
    X = T[:, None] ^ P[None, :]
    undecided = (X == 0).any(axis=1)
    first = _WORD + 1 - _bit_length64(X)
    rounds = first.max(axis=1)
    above = P[None, :] > T[:, None]
    pay = above[:, -1]
    if prog.kind == ADDITIVE:
        weights = (np.uint64(1) << np.arange(prog.n_coords - 1, dtype=np.uint64))
        alloc = (above[:, :-1].astype(np.uint64) * weights).sum(axis=1).astype(np.int64)
    else:
        idx = (~above[:, :-1]).sum(axis=1)
        alloc = np.asarray(prog.bundles, dtype=np.int64)[idx]
    cum = buyer_bit_schedule(prog, line)
    bits = cum[np.minimum(rounds, _WORD)]
    fallback = np.flatnonzero(undecided)
    strategy = LineStrategy(prog, line)
    for t in fallback:
        tr = run(p, strategy, seed=f"{seed}:{t}", tau_words=(int(T[t]),))
        rounds[t] = tr.rounds
        bits[t] = tr.n_buyer_bits
        alloc[t] = tr.alloc
        pay[t] = tr.payment > 0
    return {
        "alloc": alloc,
        "paid": pay.astype(bool),
        "payment": pay.astype(np.float64) * float(prog.U),
        "rounds": rounds.astype(np.int64),
        "buyer_bits": bits.astype(np.int64),
        "fallbacks": len(fallback),
    }
