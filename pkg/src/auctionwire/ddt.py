"""A protocol for two i.i.d. Beta(1, 2) items in which the buyer sends under two bits on average.

Types fall into four regions: Z (nothing), W (both items at a posted price), and
A / B (the preferred item, plus the other one with probability ``pi`` in
``[1/8, 1/8 + 3/100)`` and a small payment). A preliminary message names the
region with a randomized prefix code; inside A or B the threshold decides what,
if anything, still has to be streamed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .dyadic import prefix, truncate
from .engine import BuyerNode, ChanceNode, Leaf, Protocol, TauNode, run
from .intervals import IntervalSet

P_BOTH = Fraction(5535, 10000)
PI_LO = Fraction(1, 8)
PI_WIDTH = Fraction(3, 100)
DEFAULT_U = 1 << 20
ENCODING_WEIGHTS = (Fraction(98, 100), Fraction(1, 100), Fraction(1, 100))
REGIONS = ("Z", "W", "AB")
# per encoding: region -> code word
CODES = (
    {"Z": "00", "W": "01", "AB": "1"},
    {"Z": "00", "AB": "01", "W": "1"},
    {"AB": "00", "W": "01", "Z": "1"},
)
TRUNC_BITS = 20


class OracleInconsistent(ValueError):
    pass


@dataclass(frozen=True)
class DdtType:
    region: str  # "Z", "W", "A" or "B"
    preferred: int = 0
    pi_scaled: Fraction = Fraction(0)  # (pi - 1/8) / 0.03, dyadic in [0, 1)
    payment: Fraction = Fraction(0)  # expected payment in [0, P)

    @property
    def pi(self) -> Fraction:
        return PI_LO + PI_WIDTH * self.pi_scaled

    @property
    def group(self) -> str:
        return "AB" if self.region in ("A", "B") else self.region

    def check(self) -> "DdtType":
        if self.region not in ("Z", "W", "A", "B"):
            raise OracleInconsistent(f"unknown region {self.region!r}")
        if self.region in ("A", "B"):
            if self.preferred not in (0, 1):
                raise OracleInconsistent("preferred item must be 0 or 1")
            if not 0 <= self.pi_scaled < 1:
                raise OracleInconsistent("pi must lie in [1/8, 1/8 + 0.03)")
            if not 0 <= self.payment < P_BOTH:
                raise OracleInconsistent("A/B payments must lie in [0, P)")
        elif self.payment or self.pi_scaled:
            raise OracleInconsistent("Z and W types carry no lottery or payment data")
        return self


class DdtTypeOracle:
    """Synthetic region oracle with the ranges the protocol relies on.

    Regions use fixed thresholds on ``v1 + v2`` and ``v1 - v2``; the lottery and the
    payment are affine in the type and truncated to ``TRUNC_BITS`` bits.
    """

    def __init__(self, z_sum: float = 0.6, w_gap: float = 0.3, bits: int = TRUNC_BITS):
        self.z_sum = z_sum
        self.w_gap = w_gap
        self.bits = bits

    def __call__(self, v1: float, v2: float) -> DdtType:
        s, d = v1 + v2, v1 - v2
        if s < self.z_sum:
            return DdtType("Z")
        if abs(d) < self.w_gap:
            return DdtType("W")
        top = 1 - Fraction(1, 1 << self.bits)
        pi_scaled = truncate(min(max((abs(d) - self.w_gap) / (1 - self.w_gap), 0.0), float(top)), self.bits)
        frac = min(max((s - self.z_sum) / (2 - self.z_sum), 0.0), 1.0)
        pay = truncate(float(P_BOTH) * frac * 0.999, self.bits)
        return DdtType("A" if d > 0 else "B", 0 if d > 0 else 1, pi_scaled, pay).check()


def build_ddt(oracle: Optional[Callable] = None, U: int = DEFAULT_U, check_grid: int = 16) -> Protocol:
    """The protocol tree; ``oracle`` is spot-checked on a grid of types."""
    U = int(U)
    if oracle is not None:
        for i in range(check_grid + 1):
            for j in range(check_grid + 1):
                oracle(i / check_grid, j / check_grid).check()
    K = math.isqrt(U - 1) + 1 if U > 1 else 1
    inv_u = Fraction(1, U)
    case3 = IntervalSet([(PI_LO, PI_LO + PI_WIDTH)])
    case1 = IntervalSet([(0, inv_u)])
    UF = Fraction(U)

    def root():
        return ChanceNode(ENCODING_WEIGHTS, prelim_start, {"kind": "encoding"})

    def prelim_start(e):
        return prelim(e, "")

    def prelim(e, sent):
        codes = CODES[e]
        for region, word in codes.items():
            if word == sent:
                return region_node(region)

        def expand(b):
            return prelim(e, sent + str(b))

        return BuyerNode((0, 1), expand, {"kind": "prelim", "enc": e, "pos": len(sent)})

    def region_node(region):
        if region == "Z":
            return Leaf(0, 0)
        if region == "W":
            return Leaf(3, P_BOTH)
        rest = IntervalSet([(0, inv_u), (PI_LO, 1)])
        free = IntervalSet([(inv_u, PI_LO)])
        kids = (lambda: Leaf(3, 0), item_choice)
        return TauNode([free, rest], lambda i: kids[i](), {"kind": "ab-dispatch"})

    def item_choice():
        return BuyerNode((0, 1), after_item, {"kind": "item"})

    def after_item(pref):
        high = IntervalSet([(PI_LO + PI_WIDTH, 1)])
        S = IntervalSet([(0, inv_u), (PI_LO, PI_LO + PI_WIDTH)])
        kids = (lambda: Leaf(1 << pref, 0), lambda: stream(pref, 0, 0, 0, 0, S))
        return TauNode([high, S], lambda i: kids[i](), {"kind": "ab-high"})

    def stream(pref, r, a, m, b, S):
        def after_pi(bit):
            a2 = (a << 1) | bit
            if (r + 1) % K == 0:
                return BuyerNode((0, 1), lambda qb: settle(pref, r + 1, a2, m + 1, (b << 1) | qb, S), {"kind": "q", "index": m + 1})
            return settle(pref, r + 1, a2, m, b, S)

        return BuyerNode((0, 1), after_pi, {"kind": "pi", "round": r + 1})

    def settle(pref, r, a, m, b, S):
        w = Fraction(1, 1 << r)
        A = IntervalSet([(PI_LO + PI_WIDTH * a * w, PI_LO + PI_WIDTH * (a + 1) * w)])
        wb = Fraction(1, 1 << m)
        B = IntervalSet([(inv_u * b * wb, inv_u * (b + 1) * wb)])
        cont = S & (A | B)
        t3 = (S & case3) - A
        t1 = (S & case1) - B
        a_lo = A.spans[0][0]
        b_lo = B.spans[0][0]
        outcomes: dict[tuple[int, Fraction], IntervalSet] = {}

        def add(key, part):
            if part:
                outcomes[key] = outcomes[key] | part if key in outcomes else part

        add((3, Fraction(0)), t3 & IntervalSet([(0, a_lo)]))
        add((1 << pref, Fraction(0)), t3 & IntervalSet([(a_lo, 1)]))
        add((3, UF), t1 & IntervalSet([(0, b_lo)]))
        add((3, Fraction(0)), t1 & IntervalSet([(b_lo, 1)]))
        parts, kids = [], []
        if cont:
            parts.append(cont)
            kids.append(lambda: stream(pref, r, a, m, b, cont))
        for key, part in sorted(outcomes.items()):
            parts.append(part)
            kids.append(lambda key=key: Leaf(*key))
        return TauNode(parts, lambda i: kids[i](), {"kind": "ab-stream", "round": r})

    return Protocol(root, 2, UF, name="ddt", meta={"K": K})


class DdtStrategy:
    def __init__(self, t: DdtType):
        self.t = t.check()

    def __call__(self, node, history):
        info = node.info
        kind = info["kind"]
        if kind == "prelim":
            return int(CODES[info["enc"]][self.t.group][info["pos"]])
        if kind == "item":
            return self.t.preferred
        if kind == "pi":
            return prefix(self.t.pi_scaled, info["round"]) & 1
        if kind == "q":
            return prefix(self.t.payment, info["index"]) & 1
        raise ValueError(f"unexpected node {info}")


def honest_strategy_ddt(oracle: Callable, v1: float, v2: float) -> DdtStrategy:
    return DdtStrategy(oracle(v1, v2))


def sample_beta12(rng: np.random.Generator, size: int) -> np.ndarray:
    """Beta(1, 2) by inverse CDF."""
    return 1 - np.sqrt(1 - rng.random(size))


@dataclass
class DdtEstimate:
    samples: int
    per_region: dict
    overall_mean: float
    overall_se: float

    def to_json(self) -> dict:
        return {"samples": self.samples, "per_region": self.per_region, "overall_mean": self.overall_mean, "overall_se": self.overall_se}


def estimate_ddt_bits(protocol: Protocol, oracle: Callable, samples: int, seed: int = 0) -> DdtEstimate:
    """Mean buyer bits per region with standard errors, over i.i.d. Beta(1, 2) pairs."""
    rng = np.random.default_rng(seed)
    v = sample_beta12(rng, 2 * samples).reshape(samples, 2)
    groups: dict[str, dict[str, list]] = {}
    total = np.empty(samples)
    for i in range(samples):
        t = oracle(float(v[i, 0]), float(v[i, 1]))
        tr = run(protocol, DdtStrategy(t), seed=(seed << 32) + i)
        code = CODES[tr.chance_outcomes[0]][t.group]
        prelim = len(code)
        g = groups.setdefault(t.group, {"bits": [], "prelim": [], "sub": []})
        g["bits"].append(tr.n_buyer_bits)
        g["prelim"].append(prelim)
        g["sub"].append(tr.n_buyer_bits - prelim)
        total[i] = tr.n_buyer_bits
    out = {}
    for name, g in sorted(groups.items()):
        arr = {k: np.asarray(x, dtype=float) for k, x in g.items()}
        n = len(arr["bits"])
        out[name] = {
            "count": n,
            "mean_bits": float(arr["bits"].mean()),
            "se_bits": float(arr["bits"].std() / math.sqrt(n)),
            "mean_prelim_bits": float(arr["prelim"].mean()),
            "se_prelim_bits": float(arr["prelim"].std() / math.sqrt(n)),
            "mean_sub_bits": float(arr["sub"].mean()),
            "se_sub_bits": float(arr["sub"].std() / math.sqrt(n)),
        }
    return DdtEstimate(samples, out, float(total.mean()), float(total.std() / math.sqrt(samples)))


def expected_prelim_bits(group: str) -> Fraction:
    """Exact expected length of the preliminary code word for a region."""
    return sum((w * len(CODES[e][group]) for e, w in enumerate(ENCODING_WEIGHTS)), Fraction(0))


def expected_ab_bits(U: int = DEFAULT_U) -> Fraction:
    """Exact expected buyer bits inside A or B, ignoring the stream below ``1/U``."""
    inv_u = Fraction(1, U)
    item_bit = 1 - (PI_LO - inv_u)
    return item_bit + PI_WIDTH * 2
