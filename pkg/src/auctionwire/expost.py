"""Hedging wrapper that makes an IC, interim-IR protocol ex-post eps-IR.

The buyer first reports its expected utility ``Ubar``. Before every Chance node it
reports the conditional expected utility of each child except the heaviest one,
whose report is implied by the requirement that the weighted reports average to
the current report. Every leaf payment then moves by ``final report - Ubar``, so
the buyer's realized utility stays within ``eps`` of ``Ubar`` while expected
payment is unchanged.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Optional

from .dyadic import to_fraction
from .engine import BuyerNode, ChanceNode, InfeasiblePrefix, Leaf, Protocol, log2_ceil
from .audit import ENode, ExplicitTree, materialize
from .menu import Valuation


class ReportOutOfRange(InfeasiblePrefix):
    pass


def report_bits(L: int, i: int, m: int) -> int:
    """Width of one signed report before the ``i``-th Chance node (``m`` children)."""
    return L + i + 2 + log2_ceil(m - 1)


def report_grid(eps: Fraction, i: int, m: int) -> Fraction:
    return eps / (1 << i) / (1 << log2_ceil(m - 1))


def heaviest(weights) -> int:
    return max(range(len(weights)), key=lambda k: (weights[k], -k))


def wrap_expost_ir(p: Protocol | ExplicitTree, eps, U) -> Protocol:
    eps, U = to_fraction(eps), to_fraction(U)
    tree = p if isinstance(p, ExplicitTree) else materialize(p)
    L = max(0, math.ceil(math.log2(U / eps)))
    while (1 << L) * eps < U:
        L += 1
    bound = (1 << (L + 1)) * eps

    def ubar(j: int, code: int):
        if j == L + 1:
            R0 = code * eps
            return go(tree.root, (), 0, R0, R0, L + 1)
        return BuyerNode((0, 1), lambda b: ubar(j + 1, (code << 1) | b), {"kind": "ubar", "bit": j, "width": L + 1, "grid": eps})

    def go(node: ENode, hist: tuple, i: int, R: Fraction, R0: Fraction, spent: int):
        if node.kind == "leaf":
            return Leaf(node.alloc, node.payment + R - R0, node.flags, {"ubar": R0, "report": R, "wrapper_bits": spent})
        if node.kind == "B":
            labels = node.labels

            def pick(choice):
                k = labels.index(choice)
                return go(node.children[k], hist + (("B", choice),), i, R, R0, spent)

            return BuyerNode(labels, pick, {"kind": "inner", "node": node, "history": hist})
        i += 1
        m = len(node.children)
        h = heaviest(node.weights)
        others = [x for x in range(m) if x != h]
        W = report_bits(L, i, m)
        g = report_grid(eps, i, m)

        def reports(pos: int, got: tuple, j: int, code: int, spent: int):
            if pos == len(others):
                return branch(got, spent)
            if j == W:
                value = (code - (1 << (W - 1))) * g
                return reports(pos + 1, got + (value,), 0, 0, spent)
            info = {"kind": "report", "node": node, "child": others[pos], "bit": j, "width": W, "grid": g, "parent": R, "history": hist}
            return BuyerNode((0, 1), lambda b: reports(pos, got, j + 1, (code << 1) | b, spent + 1), info)

        def branch(got, spent):
            rep = dict(zip(others, got))
            rest = R - sum((node.weights[x] * rep[x] for x in others), Fraction(0))
            rep[h] = rest / node.weights[h]
            if abs(rep[h]) > bound:
                raise ReportOutOfRange(f"implied report {rep[h]} outside +-{bound}")
            return ChanceNode(
                node.weights,
                lambda x: go(node.children[x], hist + (("C", x),), i, rep[x], R0, spent),
                {"kind": "inner-chance", "node": node},
            )

        return reports(0, (), 0, 0, spent)

    return Protocol(lambda: ubar(0, 0), tree.n_items, tree.U, name="expost-ir", meta={"inner_tree": tree, "L": L, "eps": eps, "U": U})


def _round(x: Fraction, g: Fraction) -> Fraction:
    return math.floor(x / g + Fraction(1, 2)) * g


class ExpostStrategy:
    """Play the inner strategy and report true continuation utilities, carrying rounding drift."""

    def __init__(self, wrapped: Protocol, inner_strategy, v: Valuation):
        self.inner = inner_strategy
        self.v = v
        self.tree: ExplicitTree = wrapped.meta["inner_tree"]
        self._memo: dict[int, Fraction] = {}

    def true_value(self, node: ENode, hist: tuple) -> Fraction:
        key = id(node)
        if key in self._memo:
            return self._memo[key]
        if node.kind == "leaf":
            val = self.v.value(node.alloc) - node.payment
        elif node.kind == "C":
            val = sum(
                (w * self.true_value(c, hist + (("C", x),)) for x, (w, c) in enumerate(zip(node.weights, node.children)) if w),
                Fraction(0),
            )
        else:
            choice = node.labels[0] if len(node.labels) == 1 else self.inner(node, list(hist))
            k = node.labels.index(choice)
            val = self.true_value(node.children[k], hist + (("B", choice),))
        self._memo[key] = val
        return val

    def __call__(self, node, history):
        info = node.info
        kind = info["kind"]
        if kind == "inner":
            return self.inner(info["node"], list(info["history"]))
        if kind == "ubar":
            width = info["width"]
            u = self.true_value(self.tree.root, ())
            if u < -info["grid"]:
                raise ReportOutOfRange(f"expected utility {u} is negative; the inner protocol is not interim IR")
            code = max(0, int(_round(u, info["grid"]) / info["grid"]))
            code = min(code, (1 << width) - 1)
            return (code >> (width - 1 - info["bit"])) & 1
        if kind == "report":
            n, hist = info["node"], info["history"]
            drift = info["parent"] - self.true_value(n, hist)
            x = info["child"]
            target = self.true_value(n.children[x], hist + (("C", x),)) + drift
            g, W = info["grid"], info["width"]
            code = int(_round(target, g) / g) + (1 << (W - 1))
            if not 0 <= code < (1 << W):
                raise ReportOutOfRange("honest report does not fit its width")
            return (code >> (W - 1 - info["bit"])) & 1
        raise ValueError(f"unexpected node {info}")


def expost_strategy(wrapped: Protocol, inner_strategy, v: Valuation) -> ExpostStrategy:
    return ExpostStrategy(wrapped, inner_strategy, v)


def wrapper_bit_bound(C: int, U, eps) -> float:
    """``2 (C log2(U/eps) + C^2)``."""
    return 2 * (C * math.log2(to_fraction(U) / to_fraction(eps)) + C * C)


def max_wrapper_bits(tree: ExplicitTree, U, eps) -> int:
    """Largest number of wrapper bits on any root-to-leaf path."""
    eps, U = to_fraction(eps), to_fraction(U)
    L = max(0, math.ceil(math.log2(U / eps)))
    while (1 << L) * eps < U:
        L += 1

    def rec(n, i):
        if n.kind == "leaf":
            return 0
        if n.kind == "B":
            return max(rec(c, i) for c in n.children)
        m = len(n.children)
        return (m - 1) * report_bits(L, i + 1, m) + max(rec(c, i + 1) for c in n.children)

    return L + 1 + rec(tree.root, 0)
