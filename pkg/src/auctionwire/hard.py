"""Hard prior families built from weak designs and equal-revenue codes.

Unit-demand family: each type is a design set ``x`` and wants any one item of ``x``
at value ``c(x)``. XOS family: clauses are a design over the first ``n - 1`` items,
types are designs over the clauses, and the last item adds the code value to every
clause the type is interested in. Both come with an optimal protocol that extracts
full welfare; the unit-demand family also has a short but manipulable implementation.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .dyadic import fraction_str, to_fraction
from .engine import BuyerNode, ChanceNode, Leaf, Mixture, Protocol, log2_ceil
from .menu import Prior, Valuation, items_of, popcount

log = logging.getLogger(__name__)

UNIT_DEMAND = "unit_demand"
XOS_INDEPENDENT = "xos_independent"


class DesignFailure(RuntimeError):
    pass


class ParameterGuard(ValueError):
    pass


@dataclass(frozen=True)
class WeakDesign:
    n: int
    eps: Fraction
    delta: Fraction
    sets: tuple[int, ...]

    @property
    def set_size(self) -> int:
        return math.floor(self.eps * self.n)

    @property
    def intersection_bound(self) -> Fraction:
        return (1 + self.delta) * self.eps * self.eps * self.n

    def verify(self) -> None:
        """Exhaustive check of sizes, distinctness and pairwise intersections."""
        k = self.set_size
        if len(set(self.sets)) != len(self.sets):
            raise DesignFailure("design sets must be distinct")
        for s in self.sets:
            if popcount(s) != k or s >> self.n:
                raise DesignFailure(f"set {s:#x} has the wrong size or range")
        bound = self.intersection_bound
        for i in range(len(self.sets)):
            for j in range(i + 1, len(self.sets)):
                if popcount(self.sets[i] & self.sets[j]) > bound:
                    raise DesignFailure(f"sets {i} and {j} intersect too much")

    def max_intersection(self) -> int:
        return max(
            (popcount(a & b) for i, a in enumerate(self.sets) for b in self.sets[i + 1 :]),
            default=0,
        )

    def to_json(self) -> dict:
        return {"n": self.n, "eps": fraction_str(self.eps), "delta": fraction_str(self.delta), "sets": [items_of(s) for s in self.sets]}


def design_capacity(n: int, eps, delta) -> float:
    """Largest family size the random construction is guaranteed to support."""
    eps, delta = to_fraction(eps), to_fraction(delta)
    return 2 ** float(delta * delta * eps * eps * n / 6)


def gen_weak_design(n: int, eps, delta, count: int, seed: int, attempts_per_set: Optional[int] = None) -> WeakDesign:
    """Greedy rejection sampling of ``count`` subsets of size ``floor(eps n)``."""
    eps, delta = to_fraction(eps), to_fraction(delta)
    k = math.floor(eps * n)
    if k < 1:
        raise DesignFailure(f"eps * n = {eps * n} leaves empty sets")
    if count > design_capacity(n, eps, delta):
        log.info("count %d exceeds the guaranteed capacity %.3g; relying on verification", count, design_capacity(n, eps, delta))
    if attempts_per_set is None:
        tail = math.exp(-float(delta * delta * eps * eps * n) / 3)
        attempts_per_set = max(2000, int(50 / max(1e-9, 1 - min(tail * count, 0.999))))
    bound = (1 + delta) * eps * eps * n
    rng = random.Random(seed)
    for restart in range(20):
        sets: list[int] = []
        ok = True
        while len(sets) < count:
            for _ in range(attempts_per_set):
                mask = sum(1 << i for i in rng.sample(range(n), k))
                if mask not in sets and all(popcount(mask & s) <= bound for s in sets):
                    sets.append(mask)
                    break
            else:
                ok = False
                break
        if ok:
            d = WeakDesign(n, eps, delta, tuple(sets))
            d.verify()
            return d
    raise DesignFailure(f"no design of {count} sets for n={n}, eps={eps}, delta={delta}")


@dataclass(frozen=True)
class EqualRevenueDist:
    ell: int
    eps: Fraction

    @property
    def values(self) -> tuple[Fraction, ...]:
        """Support ``1, eps, ..., eps^(ell-1)``; index ``i`` holds ``eps^i``."""
        return tuple(self.eps**i for i in range(self.ell))

    @property
    def probs(self) -> tuple[Fraction, ...]:
        z = sum((self.eps**k for k in range(self.ell)), Fraction(0))
        return tuple(self.eps ** (self.ell - 1 - i) / z for i in range(self.ell))

    def sample(self, rng: random.Random) -> Fraction:
        u = Fraction(rng.getrandbits(64), 1 << 64)
        acc = Fraction(0)
        for v, p in zip(self.values, self.probs):
            acc += p
            if u < acc:
                return v
        return self.values[-1]


def sample_code_vectors(N: int, ell: int, eps, count: int, seed: int) -> list[tuple[Fraction, ...]]:
    dist = EqualRevenueDist(ell, to_fraction(eps))
    if count > ell**N:
        raise ValueError("more distinct code vectors requested than exist")
    rng = random.Random(seed)
    out: list[tuple[Fraction, ...]] = []
    seen = set()
    while len(out) < count:
        c = tuple(dist.sample(rng) for _ in range(N))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def closeness_rate(codes: Sequence[Sequence[Fraction]], dist: EqualRevenueDist, m: int, eta, seed: int, trials: int = 100) -> float:
    """Share of random ``m``-subsets on which every value's count is within ``eta`` of its expectation."""
    eta = to_fraction(eta)
    rng = random.Random(seed)
    good = total = 0
    for c in codes:
        for _ in range(trials):
            sub = rng.sample(range(len(c)), m)
            ok = True
            for v, p in zip(dist.values, dist.probs):
                cnt = sum(1 for i in sub if c[i] == v)
                if abs(cnt - p * m) > eta * p * m:
                    ok = False
            good += ok
            total += 1
    return good / total


@dataclass
class HardPrior:
    family: str
    n: int
    design: WeakDesign
    codes: tuple[Fraction, ...]
    prior: Prior
    messages: dict = field(default_factory=dict, repr=False)  # valuation -> design index
    clauses: Optional[WeakDesign] = None
    params: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.prior)

    def welfare(self) -> Fraction:
        return sum((w * v.grand_value() for w, v in self.prior), Fraction(0))

    def to_json(self) -> dict:
        out = {
            "family": self.family,
            "n": self.n,
            "design": self.design.to_json(),
            "codes": [fraction_str(c) for c in self.codes],
            "n_items": self.n,
            **self.prior.to_json(),
        }
        if self.clauses is not None:
            out["clauses"] = self.clauses.to_json()
        return out


# -- unit-demand family --------------------------------------------------------------------


@dataclass(frozen=True)
class UnitDemandPreset:
    n: int
    eps1: Fraction = Fraction(1, 10)
    delta1: Fraction = Fraction(1, 10)
    eps2: Fraction = Fraction(1, 2)
    ell: int = 2
    eta: Fraction = Fraction(1, 10)
    count: int = 8


UNIT_DEMAND_PRESETS = {n: UnitDemandPreset(n) for n in (16, 32, 64)}


def check_unit_demand_guard(eps1, delta1, eps2, ell, eta) -> None:
    eps1, delta1, eps2, eta = map(to_fraction, (eps1, delta1, eps2, eta))
    if not eps1 * (1 + delta1) < eps2**ell:
        raise ParameterGuard(f"eps1 (1 + delta1) = {eps1 * (1 + delta1)} is not below eps2^ell = {eps2 ** ell}")
    if not eta < eps2**ell:
        raise ParameterGuard(f"eta = {eta} is not below eps2^ell = {eps2 ** ell}")


def unit_demand_type(n: int, x: int, value: Fraction) -> Valuation:
    return Valuation.unit_demand([value if x >> i & 1 else Fraction(0) for i in range(n)])


def build_unit_demand_family(
    design: WeakDesign, codes: Sequence[Sequence[Fraction]], ell: int = 2, eps2=Fraction(1, 2), eta=Fraction(1, 10)
) -> list[HardPrior]:
    check_unit_demand_guard(design.eps, design.delta, eps2, ell, eta)
    out = []
    for c in codes:
        c = tuple(to_fraction(x) for x in c)
        if len(c) != len(design.sets):
            raise ValueError("one code value per design set")
        vals = [unit_demand_type(design.n, x, cx) for x, cx in zip(design.sets, c)]
        prior = Prior.uniform(vals)
        msgs = {v: k for k, v in enumerate(vals)}
        out.append(HardPrior(UNIT_DEMAND, design.n, design, c, prior, msgs, params={"ell": ell, "eps2": to_fraction(eps2), "eta": to_fraction(eta)}))
    return out


def unit_demand_family(preset: UnitDemandPreset, n_priors: int, seed: int) -> list[HardPrior]:
    d = gen_weak_design(preset.n, preset.eps1, preset.delta1, preset.count, seed)
    codes = sample_code_vectors(len(d.sets), preset.ell, preset.eps2, n_priors, seed + 1)
    return build_unit_demand_family(d, codes, preset.ell, preset.eps2, preset.eta)


def _mask_sender(n: int, targets: dict[int, object], done):
    """Buyer sends an ``n``-bit mask, item 0 first; stops early once no target can match."""

    prefixes = set()
    for x in targets:
        for j in range(n + 1):
            prefixes.add((j, x & ((1 << j) - 1)))

    def node(j: int, sent: int):
        if (j, sent) not in prefixes:
            return Leaf(0, 0, ("off_design",))
        if j == n:
            return done(sent)
        return BuyerNode((0, 1), lambda b: node(j + 1, sent | (b << j)), {"kind": "mask_bit", "bit": j})

    return lambda: node(0, 0)


class MessageStrategy:
    """Send a fixed mask."""

    def __init__(self, mask: int):
        self.mask = mask

    def __call__(self, node, history):
        return (self.mask >> node.info["bit"]) & 1


def optimal_protocol_unit_demand(hp: HardPrior) -> Protocol:
    n = hp.n
    value_of = dict(zip(hp.design.sets, hp.codes))

    def done(x):
        items = items_of(x)
        w = Fraction(1, len(items))
        return ChanceNode([w] * len(items), lambda i: Leaf(1 << items[i], value_of[x]), {"kind": "pick_item"})

    p = Protocol(_mask_sender(n, value_of, done), n, Fraction(1), name="unit-demand-optimal")
    sets = hp.design.sets
    p.meta["honest"] = lambda v: MessageStrategy(sets[hp.messages[v]])
    p.meta["messages"] = list(sets)
    return p


def nontruthful_impl_unit_demand(hp: HardPrior) -> Protocol:
    """Buyer names an item of interest and the index of its value: ``ceil(log2 n) + ceil(log2 ell)`` bits."""
    n, ell = hp.n, hp.params["ell"]
    dist = EqualRevenueDist(ell, hp.params["eps2"])
    wi, wv = log2_ceil(n), log2_ceil(ell)

    def send(j: int, acc: int, width: int, limit: int, kind: str, then):
        if j == width:
            return then(acc)
        ok = [b for b in (0, 1) if ((acc << 1) | b) << (width - j - 1) < limit]
        return BuyerNode(ok, lambda b: send(j + 1, (acc << 1) | b, width, limit, kind, then), {"kind": kind, "bit": j, "width": width})

    def root():
        return send(0, 0, wi, n, "item", lambda i: send(0, 0, wv, ell, "value", lambda k: Leaf(1 << i, dist.values[k])))

    p = Protocol(root, n, Fraction(1), name="unit-demand-short")

    def honest(v):
        k = hp.messages[v]
        x, c = hp.design.sets[k], hp.codes[k]
        idx = dist.values.index(c)
        items = items_of(x)
        return Mixture([(Fraction(1, len(items)), _ItemValue(i, idx)) for i in items])

    p.meta["honest"] = honest
    return p


class _ItemValue:
    def __init__(self, item: int, value_index: int):
        self.item = item
        self.value_index = value_index

    def __call__(self, node, history):
        info = node.info
        x = self.item if info["kind"] == "item" else self.value_index
        return (x >> (info["width"] - 1 - info["bit"])) & 1


def unit_demand_deviation_bound(hp: HardPrior, k_true: int, k_dev: int) -> Fraction:
    """Closed-form cap on a deviation's utility: ``eps1 (1 + delta1) c(x) - c(x')``."""
    d = hp.design
    return d.eps * (1 + d.delta) * hp.codes[k_true] - hp.codes[k_dev]


# -- XOS family ----------------------------------------------------------------------------


@dataclass(frozen=True)
class XosPreset:
    n: int
    b: int
    eps0: Fraction = Fraction(1, 8)
    delta0: Fraction = Fraction(1, 4)
    eps1: Fraction = Fraction(1, 8)
    delta1: Fraction = Fraction(1, 4)
    gamma: Fraction = Fraction(4, 5)
    eta: Fraction = Fraction(1, 10)
    count: int = 8


XOS_PRESETS = {16: XosPreset(16, 8), 32: XosPreset(32, 8), 64: XosPreset(64, 16, count=6)}


def check_xos_guard(eps0, delta0, eps1, delta1, gamma) -> None:
    eps0, delta0, eps1, delta1, gamma = map(to_fraction, (eps0, delta0, eps1, delta1, gamma))
    lhs = eps1 * (1 + delta1) + eps0 * (1 + delta0)
    rhs = 1 / (2 - gamma) - Fraction(1, 2)
    if not lhs < rhs:
        raise ParameterGuard(f"{lhs} is not below 1/(2-gamma) - 1/2 = {rhs}")


def xos_type(n: int, clauses: WeakDesign, y: int, w: Fraction, gamma: Fraction) -> Valuation:
    s = clauses.set_size
    unit = 1 / ((2 - gamma) * s)
    rows = []
    for j, A in enumerate(clauses.sets):
        row = [unit if A >> i & 1 else Fraction(0) for i in range(n - 1)]
        row.append(w if y >> j & 1 else Fraction(0))
        rows.append(row)
    return Valuation.xos(rows)


def build_xos_family(
    n: int,
    eps0,
    delta0,
    eps1,
    delta1,
    eta,
    gamma,
    seed: int,
    b: int = 16,
    count: int = 8,
    n_priors: int = 4,
) -> list[HardPrior]:
    check_xos_guard(eps0, delta0, eps1, delta1, gamma)
    gamma = to_fraction(gamma)
    clauses = gen_weak_design(n - 1, eps0, delta0, b, seed)
    patterns = gen_weak_design(b, eps1, delta1, count, seed + 1)
    codes = sample_code_vectors(len(patterns.sets), 2, Fraction(1, 2), n_priors, seed + 2)
    out = []
    for c in codes:
        vals = [xos_type(n, clauses, y, w, gamma) for y, w in zip(patterns.sets, c)]
        prior = Prior.uniform(vals)
        msgs = {v: k for k, v in enumerate(vals)}
        out.append(
            HardPrior(
                XOS_INDEPENDENT, n, patterns, tuple(c), prior, msgs, clauses,
                params={"gamma": gamma, "eps0": to_fraction(eps0), "delta0": to_fraction(delta0), "eta": to_fraction(eta)},
            )
        )
    return out


def xos_family(preset: XosPreset, n_priors: int, seed: int) -> list[HardPrior]:
    p = preset
    return build_xos_family(p.n, p.eps0, p.delta0, p.eps1, p.delta1, p.eta, p.gamma, seed, b=p.b, count=p.count, n_priors=n_priors)


def optimal_protocol_xos(hp: HardPrior) -> Protocol:
    """Buyer sends its clause pattern; Chance picks one of its clauses and sells it with the last item."""
    n, gamma = hp.n, hp.params["gamma"]
    base = 1 / (2 - gamma)
    value_of = dict(zip(hp.design.sets, hp.codes))
    clause_sets = hp.clauses.sets
    last = 1 << (n - 1)

    def done(y):
        ts = items_of(y)
        w = Fraction(1, len(ts))
        return ChanceNode([w] * len(ts), lambda i: Leaf(clause_sets[ts[i]] | last, value_of[y] + base), {"kind": "pick_clause"})

    p = Protocol(_mask_sender(len(clause_sets), value_of, done), n, Fraction(2), name="xos-optimal")
    sets = hp.design.sets
    p.meta["honest"] = lambda v: MessageStrategy(sets[hp.messages[v]])
    p.meta["messages"] = list(sets)
    return p


def xos_deviation_bound(hp: HardPrior) -> Fraction:
    """``1/2 - 1/(2 - gamma) + eps1 (1 + delta1) + eps0 (1 + delta0)``."""
    g = hp.params["gamma"]
    return Fraction(1, 2) - 1 / (2 - g) + hp.design.eps * (1 + hp.design.delta) + hp.params["eps0"] * (1 + hp.params["delta0"])


# -- exact deviation tables ----------------------------------------------------------------


@dataclass
class DeviationRow:
    type_index: int
    honest: Fraction
    best_design_deviation: Fraction
    off_design: Fraction
    worst_margin: Fraction  # max over design deviations of (utility - closed-form bound)


def deviation_table(hp: HardPrior, p: Protocol) -> list[DeviationRow]:
    """Exact utilities of every design message (and one off-design message) for every type."""
    from .audit import law_marginals, outcome_law

    msgs = p.meta["messages"]
    laws = [outcome_law(p, MessageStrategy(m)) for m in msgs]
    off = outcome_law(p, MessageStrategy(0))
    rows = []
    for k, (w, v) in enumerate(hp.prior):

        def util(law):
            return sum((q * (v.value(a) - pay) for (a, pay), q in law.items()), Fraction(0))

        honest = util(laws[k])
        devs = [util(laws[j]) for j in range(len(msgs)) if j != k]
        if hp.family == UNIT_DEMAND:
            bounds = [unit_demand_deviation_bound(hp, k, j) for j in range(len(msgs)) if j != k]
        else:
            bounds = [xos_deviation_bound(hp)] * len(devs)
        margin = max((d - b for d, b in zip(devs, bounds)), default=Fraction(-1))
        rows.append(DeviationRow(k, honest, max(devs, default=Fraction(-1)), util(off), margin))
    return rows
