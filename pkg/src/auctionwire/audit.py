"""Verification harness: explicit trees, exact best responses, Monte Carlo and audits."""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .dyadic import fraction_str, to_fraction
from .engine import (
    BuyerNode,
    ChanceNode,
    Leaf,
    Mixture,
    Protocol,
    ProtocolError,
    TauNode,
    run,
)
from .menu import Menu, Prior, Valuation, best_response, utility

EXACT_TOL = Fraction(0)
ALMOST_IC = Fraction(1, 10**9)
MC_SIGMAS = 4.0


class ENode:
    """A node of a fully materialized protocol tree."""

    __slots__ = ("kind", "children", "weights", "labels", "alloc", "payment", "info", "flags")

    def __init__(self, kind, children=(), weights=(), labels=(), alloc=0, payment=Fraction(0), info=None, flags=()):
        self.kind = kind
        self.children = list(children)
        self.weights = tuple(weights)
        self.labels = tuple(labels) if labels else tuple(range(len(self.children)))
        self.alloc = alloc
        self.payment = payment
        self.info = info or {}
        self.flags = tuple(flags)

    @property
    def allowed(self):
        return self.labels

    @classmethod
    def leaf(cls, alloc: int, payment, flags=()) -> "ENode":
        return cls("leaf", alloc=int(alloc), payment=to_fraction(payment), flags=flags)

    @classmethod
    def buyer(cls, children, labels=(), info=None) -> "ENode":
        return cls("B", children, labels=labels, info=info)

    @classmethod
    def chance(cls, children, weights, info=None) -> "ENode":
        ws = tuple(to_fraction(w) for w in weights)
        if sum(ws) != 1 or any(w < 0 for w in ws):
            raise ProtocolError("chance weights must be non-negative and sum to 1")
        return cls("C", children, weights=ws, info=info)

    def to_json(self) -> dict:
        if self.kind == "leaf":
            return {"kind": "leaf", "alloc_mask": self.alloc, "payment": fraction_str(self.payment)}
        out: dict[str, Any] = {"kind": self.kind, "children": [c.to_json() for c in self.children]}
        if self.kind == "C":
            out["weights"] = [fraction_str(w) for w in self.weights]
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ENode":
        kind = obj["kind"]
        if kind == "leaf":
            return cls.leaf(int(obj.get("alloc_mask", 0)), to_fraction(obj.get("payment", 0)))
        kids = [cls.from_json(c) for c in obj["children"]]
        if kind == "C":
            return cls.chance(kids, [to_fraction(w) for w in obj["weights"]])
        if kind == "B":
            return cls.buyer(kids)
        raise ValueError(f"unknown node kind {kind!r}")


@dataclass
class ExplicitTree:
    root: ENode
    n_items: int = 0
    U: Fraction = Fraction(1)

    def to_json(self) -> dict:
        return {"node": self.root.to_json(), "n_items": self.n_items, "U": fraction_str(self.U)}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ExplicitTree":
        return cls(ENode.from_json(obj["node"]), int(obj.get("n_items", 0)), to_fraction(obj.get("U", 1)))

    def nodes(self) -> Iterable[ENode]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(n.children)

    def leaves(self) -> int:
        return sum(1 for n in self.nodes() if n.kind == "leaf")

    def depth(self) -> int:
        def d(n):
            return 0 if n.kind == "leaf" else 1 + max(d(c) for c in n.children)

        return d(self.root)

    def chance_nodes(self) -> int:
        return sum(1 for n in self.nodes() if n.kind == "C")


def materialize(
    p: Protocol,
    max_rounds: Optional[int] = None,
    prune: Optional[Callable[[Leaf], bool]] = None,
    max_nodes: int = 2_000_000,
) -> ExplicitTree:
    """Expand ``p`` into an explicit tree.

    Threshold nodes beyond ``max_rounds`` are replaced by their closure, a finite
    subtree in which the buyer commits to a continuation and the rest is settled
    exactly. ``prune`` drops buyer options that lead directly to matching leaves.
    """
    count = [0]

    def rec(node, rounds: int, cut: bool) -> ENode:
        count[0] += 1
        if count[0] > max_nodes:
            raise ProtocolError(f"tree exceeds {max_nodes} nodes")
        if isinstance(node, Leaf):
            return ENode.leaf(node.alloc, node.payment, node.flags)
        if isinstance(node, BuyerNode):
            kids, labels = [], []
            for a in node.allowed:
                child = node.expand(a)
                if prune is not None and isinstance(child, Leaf) and prune(child):
                    continue
                kids.append(rec(child, rounds, cut))
                labels.append(a)
            if not kids:
                a = node.allowed[0]
                kids, labels = [rec(node.expand(a), rounds, cut)], [a]
            return ENode.buyer(kids, labels, node.info)
        if isinstance(node, TauNode):
            if cut and max_rounds is not None and rounds >= max_rounds:
                if node.closure is None:
                    raise ProtocolError("round cutoff reached at a node without a closure")
                return rec(node.closure(), rounds, False)
            ws = node.weights()
            return ENode.chance([rec(node.expand(i), rounds + 1, cut) for i in range(len(ws))], ws, node.info)
        if isinstance(node, ChanceNode):
            return ENode.chance([rec(node.expand(i), rounds + 1, cut) for i in range(len(node.weights))], node.weights, node.info)
        raise ProtocolError(f"unknown node {node!r}")

    return ExplicitTree(rec(p.start(), 0, True), p.n_items, p.U)


# -- exact evaluation ----------------------------------------------------------------------


@dataclass
class BestResponse:
    value: Fraction
    revenue: Fraction
    choices: dict = field(default_factory=dict, repr=False)

    def strategy(self):
        choices = self.choices

        def s(node, history):
            return node.labels[choices[id(node)]]

        return s


def tree_best_response(t: ExplicitTree | ENode, v: Valuation) -> BestResponse:
    """Backward induction with ties broken toward higher revenue, then the lower index."""
    root = t.root if isinstance(t, ExplicitTree) else t
    choices: dict[int, int] = {}
    cache: dict[int, tuple[Fraction, Fraction]] = {}

    def rec(n: ENode) -> tuple[Fraction, Fraction]:
        key = id(n)
        if key in cache:
            return cache[key]
        if n.kind == "leaf":
            out = (v.value(n.alloc) - n.payment, n.payment)
        elif n.kind == "C":
            u = r = Fraction(0)
            for w, c in zip(n.weights, n.children):
                cu, cr = rec(c)
                u += w * cu
                r += w * cr
            out = (u, r)
        else:
            best, best_i = None, 0
            for i, c in enumerate(n.children):
                val = rec(c)
                if best is None or val > best:
                    best, best_i = val, i
            choices[key] = best_i
            out = best
        cache[key] = out
        return out

    u, r = rec(root)
    return BestResponse(u, r, choices)


def reduced_strategy_count(t: ExplicitTree | ENode) -> int:
    root = t.root if isinstance(t, ExplicitTree) else t

    def rec(n):
        if n.kind == "leaf":
            return 1
        if n.kind == "B":
            return sum(rec(c) for c in n.children)
        return math.prod(rec(c) for c in n.children)

    return rec(root)


def brute_force_best(t: ExplicitTree | ENode, v: Valuation) -> tuple[Fraction, Fraction]:
    """Enumerate every reduced pure strategy forward and keep the lexicographic best (utility, revenue)."""
    root = t.root if isinstance(t, ExplicitTree) else t

    def outcomes(n) -> list[tuple[Fraction, Fraction]]:
        if n.kind == "leaf":
            return [(v.value(n.alloc) - n.payment, n.payment)]
        if n.kind == "B":
            return [o for c in n.children for o in outcomes(c)]
        per_child = [outcomes(c) for c in n.children]
        out = []
        for combo in itertools.product(*per_child):
            u = sum((w * o[0] for w, o in zip(n.weights, combo)), Fraction(0))
            r = sum((w * o[1] for w, o in zip(n.weights, combo)), Fraction(0))
            out.append((u, r))
        return out

    return max(outcomes(root))


def evaluate_strategy(t: ExplicitTree | ENode, v: Valuation, strategy) -> tuple[Fraction, Fraction]:
    """Exact (utility, revenue) of a deterministic or mixed strategy on an explicit tree."""
    root = t.root if isinstance(t, ExplicitTree) else t
    if isinstance(strategy, Mixture):
        u = r = Fraction(0)
        for w, s in strategy.components:
            cu, cr = evaluate_strategy(root, v, s)
            u += w * cu
            r += w * cr
        return u, r

    def rec(n, history):
        if n.kind == "leaf":
            return v.value(n.alloc) - n.payment, n.payment
        if n.kind == "C":
            u = r = Fraction(0)
            for i, (w, c) in enumerate(zip(n.weights, n.children)):
                if w:
                    cu, cr = rec(c, history + [("C", i)])
                    u += w * cu
                    r += w * cr
            return u, r
        if len(n.children) == 1 and len(n.labels) == 1:
            choice = n.labels[0]
        else:
            choice = strategy(n, history)
        return rec(n.children[n.labels.index(choice)], history + [("B", choice)])

    return rec(root, [])


# law key for mass still undecided at the cutoff when the node offers no closure
CUT = (-1, Fraction(0))


def outcome_law(p: Protocol, strategy, max_rounds: Optional[int] = None) -> dict[tuple[int, Fraction], Fraction]:
    """Exact distribution of (allocation mask, payment) under ``strategy``.

    Past ``max_rounds`` a threshold node is replaced by its closure; nodes without one
    put their remaining mass under the key ``CUT``.
    """
    law: dict[tuple[int, Fraction], Fraction] = {}
    if isinstance(strategy, Mixture):
        for w, s in strategy.components:
            for k, q in outcome_law(p, s, max_rounds).items():
                law[k] = law.get(k, Fraction(0)) + w * q
        return law

    def rec(node, prob, history, rounds, cut):
        if not prob:
            return
        if isinstance(node, Leaf):
            key = (node.alloc, node.payment)
            law[key] = law.get(key, Fraction(0)) + prob
            return
        if isinstance(node, BuyerNode):
            choice = node.allowed[0] if node.forced else strategy(node, history)
            rec(node.expand(choice), prob, history + [("B", choice)], rounds, cut)
            return
        if isinstance(node, TauNode):
            if cut and max_rounds is not None and rounds >= max_rounds:
                if node.closure is None:
                    law[CUT] = law.get(CUT, Fraction(0)) + prob
                else:
                    rec(node.closure(), prob, history, rounds, False)
                return
            ws = node.weights()
        else:
            ws = node.weights
        for i, w in enumerate(ws):
            rec(node.expand(i), prob * w, history + [("C", i)], rounds + 1, cut)

    rec(p.start(), Fraction(1), [], 0, True)
    return law


def law_marginals(law: Mapping[tuple[int, Fraction], Fraction], n_items: int) -> tuple[tuple[Fraction, ...], Fraction]:
    items = [Fraction(0)] * n_items
    pay = Fraction(0)
    for (alloc, payment), q in law.items():
        if (alloc, payment) == CUT:
            continue
        pay += q * payment
        for i in range(n_items):
            if alloc >> i & 1:
                items[i] += q
    return tuple(items), pay


# -- Monte Carlo ---------------------------------------------------------------------------


@dataclass
class OutcomeStats:
    trials: int
    item_freq: list[float]
    bundle_freq: dict[int, float]
    mean_payment: float
    sd_payment: float
    mean_rounds: float
    sd_rounds: float
    mean_buyer_bits: float
    sd_buyer_bits: float

    def item_ci(self, i: int, sigmas: float = MC_SIGMAS) -> tuple[float, float]:
        p = self.item_freq[i]
        half = sigmas * math.sqrt(max(p * (1 - p), 0.0) / self.trials)
        return p - half, p + half

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "item_freq": self.item_freq,
            "bundle_freq": {str(k): v for k, v in sorted(self.bundle_freq.items())},
            "mean_payment": self.mean_payment,
            "sd_payment": self.sd_payment,
            "mean_rounds": self.mean_rounds,
            "sd_rounds": self.sd_rounds,
            "mean_buyer_bits": self.mean_buyer_bits,
            "sd_buyer_bits": self.sd_buyer_bits,
        }


def _stats(n_items, alloc, payment, rounds, bits) -> OutcomeStats:
    alloc = np.asarray(alloc, dtype=np.int64)
    payment = np.asarray(payment, dtype=np.float64)
    rounds = np.asarray(rounds, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.float64)
    trials = len(alloc)
    masks, counts = np.unique(alloc, return_counts=True)
    return OutcomeStats(
        trials=trials,
        item_freq=[float(((alloc >> i) & 1).mean()) for i in range(n_items)],
        bundle_freq={int(m): float(c) / trials for m, c in zip(masks, counts)},
        mean_payment=float(payment.mean()),
        sd_payment=float(payment.std()),
        mean_rounds=float(rounds.mean()),
        sd_rounds=float(rounds.std()),
        mean_buyer_bits=float(bits.mean()),
        sd_buyer_bits=float(bits.std()),
    )


def mc_outcome(p: Protocol, s, trials: int, seed: int) -> OutcomeStats:
    """Monte Carlo outcome statistics; stream protocols with a fixed line run vectorized."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    from .stream import LineStrategy, run_stream_batch

    if "program" in p.meta and isinstance(s, LineStrategy) and s.prog is p.meta["program"]:
        out = run_stream_batch(p, s.line, trials, seed)
        return _stats(p.n_items, out["alloc"], out["payment"], out["rounds"], out["buyer_bits"])
    alloc, pay, rounds, bits = [], [], [], []
    for t in range(trials):
        tr = run(p, s, seed=f"{seed}:{t}")
        alloc.append(tr.alloc)
        pay.append(float(tr.payment))
        rounds.append(tr.rounds)
        bits.append(tr.n_buyer_bits)
    return _stats(p.n_items, alloc, pay, rounds, bits)


# -- reports -------------------------------------------------------------------------------


@dataclass
class AuditReport:
    verdict: str
    per_type: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict in ("IC", "equivalent")

    def to_json(self) -> dict:
        def conv(x):
            if isinstance(x, Fraction):
                return fraction_str(x)
            if isinstance(x, dict):
                return {str(k): conv(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [conv(v) for v in x]
            if isinstance(x, (np.floating, np.integer)):
                return x.item()
            return x

        return conv({"verdict": self.verdict, "per_type": self.per_type, "stats": self.stats, "notes": self.notes})


def _honest_factory(p: Protocol, override=None):
    if override is not None:
        return override
    if "honest" not in p.meta:
        raise ValueError(f"{p.name} has no honest strategy; pass one")
    return p.meta["honest"]


def equivalence_check(
    p: Protocol,
    m: Menu,
    prior: Prior,
    trials: int = 100_000,
    seed: int = 0,
    sigmas: float = MC_SIGMAS,
    honest=None,
) -> AuditReport:
    """Honest Monte Carlo frequencies against the menu line each type picks."""
    factory = _honest_factory(p, honest)
    rows, ok = [], True
    for k, (w, v) in enumerate(prior):
        idx = best_response(v, m)
        line = m.lines[idx]
        stats = mc_outcome(p, factory(v), trials, seed + k)
        exact = line.marginals(m.n_items)
        deltas = []
        for i, q in enumerate(exact):
            f = stats.item_freq[i]
            half = sigmas * math.sqrt(float(q * (1 - q)) / trials)
            good = abs(f - float(q)) <= half if 0 < q < 1 else f == float(q)
            deltas.append(f - float(q))
            ok &= good
        q = line.payment / m.U
        half = sigmas * float(m.U) * math.sqrt(float(q * (1 - q)) / trials)
        pay_good = abs(stats.mean_payment - float(line.payment)) <= half if 0 < q < 1 else stats.mean_payment == float(line.payment)
        ok &= pay_good
        rows.append({"type": k, "line": idx, "item_deltas": deltas, "payment_delta": stats.mean_payment - float(line.payment), "mean_rounds": stats.mean_rounds})
    return AuditReport("equivalent" if ok else "not-equivalent", rows, notes=[f"{sigmas} sigma binomial bands, {trials} runs per type"])


def ic_audit(
    p: Protocol,
    prior: Prior,
    honest=None,
    max_rounds: Optional[int] = None,
    prune=None,
    tol: Fraction = EXACT_TOL,
    tree: Optional[ExplicitTree] = None,
) -> AuditReport:
    """Exact IC audit on the materialized tree: honest value against the best response."""
    factory = _honest_factory(p, honest)
    t = tree if tree is not None else materialize(p, max_rounds=max_rounds, prune=prune)
    rows, worst = [], None
    for k, (w, v) in enumerate(prior):
        hu, hr = evaluate_strategy(t, v, factory(v))
        br = tree_best_response(t, v)
        gap = br.value - hu
        worst = gap if worst is None or gap > worst else worst
        rows.append({"type": k, "honest": hu, "best_deviation": br.value, "gap": gap})
    verdict = "IC" if worst <= tol else "non-IC"
    notes = [f"deviations: every strategy of the tree materialized with round cutoff {max_rounds}"]
    return AuditReport(verdict, rows, {"max_gap": worst, "nodes": sum(1 for _ in t.nodes())}, notes)


def ic_audit_menu(
    p: Protocol,
    m: Menu,
    prior: Prior,
    tol: Fraction = EXACT_TOL,
    depth: int = 6,
    honest=None,
    prune=None,
) -> AuditReport:
    """Line-level deviations in closed form plus every strategy up to ``depth`` rounds."""
    rows, worst = [], Fraction(0)
    for k, (w, v) in enumerate(prior):
        h = best_response(v, m)
        hu = utility(v, m.lines[h])
        alt = max(utility(v, l) for l in m.lines)
        worst = max(worst, alt - hu)
        rows.append({"type": k, "line": h, "honest": hu, "best_line": alt, "gap": alt - hu})
    tree_rep = ic_audit(p, prior, honest=honest, max_rounds=depth, prune=prune)
    for row, trow in zip(rows, tree_rep.per_type):
        row["tree_honest"] = trow["honest"]
        row["tree_best"] = trow["best_deviation"]
        row["tree_gap"] = trow["gap"]
        worst = max(worst, trow["gap"])
    verdict = "IC" if worst <= tol else "non-IC"
    notes = ["audited subset: other menu lines and all strategies over the first %d rounds" % depth]
    return AuditReport(verdict, rows, {"max_gap": worst, **{k: v for k, v in tree_rep.stats.items() if k != "max_gap"}}, notes)


@dataclass
class RevenueRow:
    prior: int
    revenue: Fraction
    welfare: Fraction

    @property
    def fraction(self) -> Fraction:
        return self.revenue / self.welfare if self.welfare else Fraction(0)


def revenue_audit(t: ExplicitTree, priors: Sequence) -> dict:
    """Revenue of per-type best responses on ``t`` as a fraction of expected welfare."""
    rows = []
    for j, prior in enumerate(priors):
        pr = prior.prior if hasattr(prior, "prior") else prior
        rev = wel = Fraction(0)
        for w, v in pr:
            br = tree_best_response(t, v)
            rev += w * br.revenue
            wel += w * v.grand_value()
        rows.append(RevenueRow(j, rev, wel))
    fr = [r.fraction for r in rows]
    return {
        "rows": rows,
        "fractions": fr,
        "min": min(fr) if fr else Fraction(0),
        "mean": sum(fr, Fraction(0)) / len(fr) if fr else Fraction(0),
        "max": max(fr) if fr else Fraction(0),
    }


def with_opt_out(t: ExplicitTree) -> ExplicitTree:
    """Prepend a root choice of the empty outcome, which makes the tree interim IR."""
    return ExplicitTree(ENode.buyer([ENode.leaf(0, Fraction(0)), t.root]), t.n_items, t.U)


# -- random trees --------------------------------------------------------------------------


def random_tree(
    rng: random.Random,
    n_items: int = 2,
    max_depth: int = 6,
    max_leaves: int = 64,
    p_chance: float = 0.35,
    pay_bits: int = 3,
    max_strategies: int = 50_000,
) -> ExplicitTree:
    """A random finite tree with at most ``max_leaves`` leaves and a bounded strategy count."""

    def rnd_leaf():
        return ENode.leaf(rng.randrange(1 << n_items), Fraction(rng.randrange(1 << pay_bits), 1 << pay_bits))

    def build(depth, budget):
        if depth == 0 or budget < 2 or rng.random() < 0.25:
            return rnd_leaf(), 1
        arity = 2 if budget < 6 or rng.random() < 0.8 else 3
        shares = [budget // arity] * arity
        kids, used = [], 0
        for s in shares:
            c, n = build(depth - 1, s)
            kids.append(c)
            used += n
        if rng.random() < p_chance:
            raw = [rng.randrange(1, 8) for _ in kids]
            tot = sum(raw)
            return ENode.chance(kids, [Fraction(r, tot) for r in raw]), used
        return ENode.buyer(kids), used

    while True:
        root, _ = build(max_depth, max_leaves)
        t = ExplicitTree(root, n_items, Fraction(1))
        if t.leaves() <= max_leaves and reduced_strategy_count(t) <= max_strategies:
            return t
