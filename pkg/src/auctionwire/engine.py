"""Generic runner for two-party auction protocols.

A protocol is a lazily expanded tree. Internal nodes are

* :class:`BuyerNode` -- the buyer picks one of ``allowed`` (a singleton is forced);
* :class:`ChanceNode` -- an explicit distribution, sampled with a fresh lazy uniform;
* :class:`TauNode` -- a partition of the seller's current knowledge about the hidden
  uniform threshold. The part containing the threshold is found by drawing its bits
  on demand and the index of that part becomes public.

Leaves carry an allocation bitmask and a payment.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional, Sequence, Union

from .dyadic import fraction_str, to_fraction
from .intervals import IntervalSet

DEFAULT_STEP_CAP = 10**6
_WORD = 64


class ProtocolError(RuntimeError):
    pass


class StepLimitExceeded(ProtocolError):
    pass


class InfeasiblePrefix(ProtocolError):
    """The buyer picked a value the node does not allow."""


class Leaf:
    __slots__ = ("alloc", "payment", "flags", "extra")

    def __init__(self, alloc: int, payment, flags: Sequence[str] = (), extra: Optional[dict] = None):
        self.alloc = int(alloc)
        self.payment = to_fraction(payment)
        self.flags = tuple(flags)
        self.extra = extra

    def __repr__(self) -> str:
        return f"Leaf(alloc={self.alloc:#b}, payment={self.payment})"


class BuyerNode:
    __slots__ = ("allowed", "expand", "info")

    def __init__(self, allowed: Sequence[int], expand: Callable[[int], "Node"], info: Optional[dict] = None):
        if not allowed:
            raise ProtocolError("a buyer node needs at least one allowed value")
        self.allowed = tuple(allowed)
        self.expand = expand
        self.info = info or {}

    @property
    def forced(self) -> bool:
        return len(self.allowed) == 1

    def bits(self) -> int:
        return (len(self.allowed) - 1).bit_length() if len(self.allowed) > 1 else 0


class ChanceNode:
    __slots__ = ("weights", "expand", "info", "_cum")

    def __init__(self, weights: Sequence, expand: Callable[[int], "Node"], info: Optional[dict] = None):
        ws = tuple(to_fraction(w) for w in weights)
        if any(w < 0 for w in ws) or sum(ws) != 1:
            raise ProtocolError(f"chance weights must be non-negative and sum to 1, got {ws}")
        self.weights = ws
        self.expand = expand
        self.info = info or {}
        self._cum = None

    def cumulative(self) -> list[Fraction]:
        if self._cum is None:
            acc, out = Fraction(0), [Fraction(0)]
            for w in self.weights:
                acc += w
                out.append(acc)
            self._cum = out
        return self._cum


class TauNode:
    """Reveal which of ``parts`` (a partition of the current hidden set) holds the threshold."""

    __slots__ = ("parts", "expand", "info", "closure")

    def __init__(
        self,
        parts: Sequence[IntervalSet],
        expand: Callable[[int], "Node"],
        info: Optional[dict] = None,
        closure: Optional[Callable[[], "Node"]] = None,
    ):
        self.parts = tuple(parts)
        if not self.parts:
            raise ProtocolError("a threshold node needs at least one part")
        self.expand = expand
        self.info = info or {}
        self.closure = closure

    def weights(self) -> tuple[Fraction, ...]:
        ms = [p.measure() for p in self.parts]
        total = sum(ms, Fraction(0))
        return tuple(m / total for m in ms)

    def hidden_set(self) -> IntervalSet:
        out = IntervalSet()
        for p in self.parts:
            out = out | p
        return out


Node = Union[Leaf, BuyerNode, ChanceNode, TauNode]


@dataclass
class Protocol:
    """A protocol is a root factory plus public metadata."""

    root: Callable[[], Node]
    n_items: int
    U: Fraction
    name: str = "protocol"
    meta: dict = field(default_factory=dict)

    def start(self) -> Node:
        return self.root()


class BitStream:
    """A lazily drawn uniform bit sequence, cached in 64-bit words."""

    __slots__ = ("_rng", "_words", "drawn")

    def __init__(self, seed: Any, words: Sequence[int] = ()):
        self._rng = random.Random(seed)
        self._words = [int(w) for w in words]
        self.drawn = 0

    def _word(self, j: int) -> int:
        while len(self._words) <= j:
            self._words.append(self._rng.getrandbits(_WORD))
        return self._words[j]

    def bit(self, k: int) -> int:
        """Bit ``k`` (1-based) after the binary point."""
        if k < 1:
            raise ValueError("bits are indexed from 1")
        j, off = divmod(k - 1, _WORD)
        if k > self.drawn:
            self.drawn = k
        return (self._word(j) >> (_WORD - 1 - off)) & 1

    def prefix(self, k: int) -> int:
        """The first ``k`` bits as an integer."""
        if k <= 0:
            return 0
        if k > self.drawn:
            self.drawn = k
        full, rem = divmod(k, _WORD)
        out = 0
        for j in range(full):
            out = (out << _WORD) | self._word(j)
        if rem:
            out = (out << rem) | (self._word(full) >> (_WORD - rem))
        return out


class TauStream(BitStream):
    """The hidden threshold, one bit at a time."""


def tau_bit(t: BitStream, k: int) -> int:
    return t.bit(k)


class LazyUniform:
    """A fresh uniform on ``[0, 1)`` read from a shared coin stream."""

    def __init__(self, coins: "CoinSource"):
        self.coins = coins
        self.value = 0
        self.k = 0

    def more(self) -> None:
        self.value = (self.value << 1) | self.coins.next_bit()
        self.k += 1

    def pick(self, cumulative: Sequence[Fraction]) -> int:
        """Index ``i`` with ``cumulative[i] <= u < cumulative[i+1]``."""
        last = len(cumulative) - 2
        while True:
            lo_num, k = self.value, self.k
            for i in range(last + 1):
                a, b = cumulative[i], cumulative[i + 1]
                if a == b:
                    continue
                # [lo_num/2^k, (lo_num+1)/2^k) inside [a, b)
                if (lo_num * a.denominator >= a.numerator << k) and ((lo_num + 1) * b.denominator <= b.numerator << k):
                    return i
            self.more()


class CoinSource:
    __slots__ = ("_stream", "used")

    def __init__(self, seed: Any):
        self._stream = BitStream(f"coins:{seed}")
        self.used = 0

    def next_bit(self) -> int:
        self.used += 1
        return self._stream.bit(self.used)


class Mixture:
    """A randomized buyer: draws one deterministic strategy at the start of each run."""

    def __init__(self, components: Sequence[tuple[Any, Callable]]):
        self.components = tuple((to_fraction(w), s) for w, s in components)
        if sum(w for w, _ in self.components) != 1:
            raise ValueError("mixture weights must sum to 1")

    def cumulative(self) -> list[Fraction]:
        acc, out = Fraction(0), [Fraction(0)]
        for w, _ in self.components:
            acc += w
            out.append(acc)
        return out


@dataclass
class Transcript:
    seed: int
    buyer_bits: list[int] = field(default_factory=list)
    chance_outcomes: list[int] = field(default_factory=list)
    rounds: int = 0
    depth: int = 0
    forced: int = 0
    alloc: int = 0
    payment: Fraction = Fraction(0)
    tau_prefix_used: int = 0
    coin_bits: int = 0
    flags: tuple = ()
    extra: Optional[dict] = None

    @property
    def n_buyer_bits(self) -> int:
        return len(self.buyer_bits)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "buyer_bits": "".join(map(str, self.buyer_bits)),
            "alloc_mask": self.alloc,
            "payment": fraction_str(self.payment),
        }

    def to_jsonl(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def step_cap() -> int:
    raw = os.environ.get("AUCTIONWIRE_STEP_CAP")
    return int(raw) if raw else DEFAULT_STEP_CAP


def _emit_choice(tr: Transcript, node: BuyerNode, choice: int) -> None:
    width = node.bits()
    idx = node.allowed.index(choice)
    for j in range(width - 1, -1, -1):
        tr.buyer_bits.append((idx >> j) & 1)


def resolve_tau(node: TauNode, tau: BitStream, start: int = 0) -> tuple[int, int]:
    """Index of the part holding the threshold and the bit depth that settled it."""
    parts = node.parts
    if len(parts) == 1:
        return 0, start
    k = start
    while True:
        a = tau.prefix(k)
        hit = -1
        for i, p in enumerate(parts):
            if p.overlaps_cell(a, k):
                if hit >= 0:
                    hit = -2
                    break
                hit = i
        if hit >= 0:
            return hit, k
        if hit == -1:
            raise ProtocolError("threshold escaped the hidden set")
        k += 1


def run(p: Protocol, s, seed: int, cap: Optional[int] = None, tau_words: Sequence[int] = ()) -> Transcript:
    """Play one run of ``p`` against buyer strategy ``s``.

    ``s(node, history)`` returns the buyer's value at a non-forced :class:`BuyerNode`;
    ``history`` lists ``("B", value)`` and ``("C", outcome)`` pairs seen so far.
    """
    cap = step_cap() if cap is None else cap
    tau = TauStream(seed, tau_words)
    coins = CoinSource(seed)
    tr = Transcript(seed=seed)
    if isinstance(s, Mixture):
        s = s.components[LazyUniform(coins).pick(s.cumulative())][1]
    history: list[tuple[str, int]] = []
    node = p.start()
    steps = 0
    tau_depth = 0
    while not isinstance(node, Leaf):
        steps += 1
        if steps > cap:
            raise StepLimitExceeded(f"{p.name}: more than {cap} nodes visited")
        if isinstance(node, BuyerNode):
            if node.forced:
                choice = node.allowed[0]
                tr.forced += 1
            else:
                choice = s(node, history)
                if choice not in node.allowed:
                    raise InfeasiblePrefix(f"value {choice} not in {node.allowed} at {node.info}")
                _emit_choice(tr, node, choice)
            history.append(("B", choice))
            node = node.expand(choice)
        elif isinstance(node, TauNode):
            idx, tau_depth = resolve_tau(node, tau, tau_depth)
            tr.rounds += 1
            tr.chance_outcomes.append(idx)
            history.append(("C", idx))
            node = node.expand(idx)
        elif isinstance(node, ChanceNode):
            idx = LazyUniform(coins).pick(node.cumulative())
            tr.rounds += 1
            tr.chance_outcomes.append(idx)
            history.append(("C", idx))
            node = node.expand(idx)
        else:
            raise ProtocolError(f"unknown node type {type(node).__name__}")
        tr.depth += 1
    tr.alloc = node.alloc
    tr.payment = node.payment
    tr.flags = node.flags
    tr.extra = node.extra
    tr.tau_prefix_used = tau.drawn
    tr.coin_bits = coins.used
    return tr


def leaf_protocol(alloc: int = 0, payment=0, n_items: int = 0, U=1) -> Protocol:
    return Protocol(lambda: Leaf(alloc, payment), n_items, to_fraction(U), name="leaf")


def log2_ceil(x: int) -> int:
    return (x - 1).bit_length() if x > 1 else 0
