"""Direct-revelation mechanisms as menus, valuation classes and best responses."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Sequence

from .dyadic import Number, check_probability, fraction_str, to_fraction

ADDITIVE = "additive"
UNIT_DEMAND = "unit_demand"
XOS = "xos"
VALUATION_CLASSES = (ADDITIVE, UNIT_DEMAND, XOS)

_BUNDLE_TOL = Fraction(1, 10**12)


class MenuError(ValueError):
    pass


class PaymentExceedsCap(MenuError):
    pass


class FormMismatch(MenuError):
    pass


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def items_of(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class Valuation:
    """A valuation ``v: 2^[n] -> R``.

    Additive and unit-demand valuations carry per-item ``values``; XOS valuations
    carry ``clauses``, each a vector of per-item values, and take the best clause.
    """

    kind: str
    values: tuple[Fraction, ...] = ()
    clauses: tuple[tuple[Fraction, ...], ...] = ()

    def __post_init__(self):
        if self.kind not in VALUATION_CLASSES:
            raise ValueError(f"unknown valuation class {self.kind!r}")
        object.__setattr__(self, "values", tuple(to_fraction(x) for x in self.values))
        object.__setattr__(
            self, "clauses", tuple(tuple(to_fraction(x) for x in c) for c in self.clauses)
        )
        if self.kind == XOS:
            if not self.clauses:
                raise ValueError("an XOS valuation needs at least one clause")
            if len({len(c) for c in self.clauses}) != 1:
                raise ValueError("XOS clauses must have equal length")
            if any(x < 0 for c in self.clauses for x in c):
                raise ValueError("XOS clause values must be non-negative")
        elif self.kind == UNIT_DEMAND and any(x < 0 for x in self.values):
            raise ValueError("unit-demand item values must be non-negative")

    @classmethod
    def additive(cls, values: Iterable[Number]) -> "Valuation":
        return cls(ADDITIVE, tuple(values))

    @classmethod
    def unit_demand(cls, values: Iterable[Number]) -> "Valuation":
        return cls(UNIT_DEMAND, tuple(values))

    @classmethod
    def xos(cls, clauses: Iterable[Iterable[Number]]) -> "Valuation":
        return cls(XOS, clauses=tuple(tuple(c) for c in clauses))

    @property
    def n_items(self) -> int:
        return len(self.clauses[0]) if self.kind == XOS else len(self.values)

    def value(self, mask: int) -> Fraction:
        if mask == 0:
            return Fraction(0)
        idx = items_of(mask)
        if self.kind == ADDITIVE:
            return sum((self.values[i] for i in idx), Fraction(0))
        if self.kind == UNIT_DEMAND:
            return max(self.values[i] for i in idx)
        return max(sum((c[i] for i in idx), Fraction(0)) for c in self.clauses)

    def grand_value(self) -> Fraction:
        return self.value((1 << self.n_items) - 1)

    def to_json(self) -> dict:
        if self.kind == XOS:
            return {"class": XOS, "clauses": [[fraction_str(x) for x in c] for c in self.clauses]}
        return {"class": self.kind, "values": [fraction_str(x) for x in self.values]}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Valuation":
        kind = obj["class"]
        if kind == XOS:
            return cls.xos(obj["clauses"])
        return cls(kind, tuple(obj["values"]))


@dataclass(frozen=True)
class MenuLine:
    """One option: an allocation (per-item marginals or a bundle lottery) and a payment."""

    payment: Fraction
    item_probs: Optional[tuple[Fraction, ...]] = None
    bundle_dist: Optional[tuple[tuple[int, Fraction], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "payment", to_fraction(self.payment))
        if self.payment < 0:
            raise MenuError("payments must be non-negative")
        if self.item_probs is None and self.bundle_dist is None:
            raise MenuError("a menu line needs item_probs or bundle_dist")
        if self.item_probs is not None:
            probs = tuple(check_probability(to_fraction(p)) for p in self.item_probs)
            object.__setattr__(self, "item_probs", probs)
        if self.bundle_dist is not None:
            raw = self.bundle_dist.items() if isinstance(self.bundle_dist, Mapping) else self.bundle_dist
            merged: dict[int, Fraction] = {}
            for mask, p in raw:
                p = check_probability(to_fraction(p))
                if p:
                    merged[int(mask)] = merged.get(int(mask), Fraction(0)) + p
            if abs(sum(merged.values(), Fraction(0)) - 1) > _BUNDLE_TOL:
                raise MenuError("bundle_dist must sum to 1")
            object.__setattr__(self, "bundle_dist", tuple(sorted(merged.items())))

    @classmethod
    def items(cls, probs: Iterable[Number], payment: Number) -> "MenuLine":
        return cls(to_fraction(payment), item_probs=tuple(probs))

    @classmethod
    def bundles(cls, dist: Mapping[int, Number] | Iterable, payment: Number) -> "MenuLine":
        pairs = dist.items() if isinstance(dist, Mapping) else dist
        return cls(to_fraction(payment), bundle_dist=tuple((m, to_fraction(p)) for m, p in pairs))

    def marginals(self, n_items: int) -> tuple[Fraction, ...]:
        """Probability that each item is allocated."""
        if self.item_probs is not None:
            return self.item_probs
        out = [Fraction(0)] * n_items
        for mask, p in self.bundle_dist:
            for i in items_of(mask):
                out[i] += p
        return tuple(out)

    def is_zero(self) -> bool:
        if self.payment:
            return False
        if self.item_probs is not None:
            return not any(self.item_probs)
        return self.bundle_dist == ((0, Fraction(1)),)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"payment": fraction_str(self.payment)}
        if self.item_probs is not None:
            out["item_probs"] = [fraction_str(p) for p in self.item_probs]
        if self.bundle_dist is not None:
            out["bundle_dist"] = {str(m): fraction_str(p) for m, p in self.bundle_dist}
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "MenuLine":
        probs = obj.get("item_probs")
        dist = obj.get("bundle_dist")
        return cls(
            to_fraction(obj["payment"]),
            item_probs=tuple(probs) if probs is not None else None,
            bundle_dist=tuple((int(k), v) for k, v in dist.items()) if dist is not None else None,
        )


def zero_line(n_items: int) -> MenuLine:
    return MenuLine.items([0] * n_items, 0)


@dataclass(frozen=True)
class Menu:
    n_items: int
    U: Fraction
    lines: tuple[MenuLine, ...]

    def __post_init__(self):
        object.__setattr__(self, "U", to_fraction(self.U))
        object.__setattr__(self, "lines", tuple(self.lines))
        if self.U <= 0:
            raise MenuError("U must be positive")
        if not self.lines:
            raise MenuError("a menu needs at least one line")
        for line in self.lines:
            if line.item_probs is not None and len(line.item_probs) != self.n_items:
                raise MenuError("item_probs length differs from n_items")
            if line.bundle_dist is not None and any(m >> self.n_items for m, _ in line.bundle_dist):
                raise MenuError("bundle mask mentions an item beyond n_items")
        if not any(line.is_zero() for line in self.lines):
            raise MenuError("the menu must contain the zero line explicitly")
        if len(set(self.lines)) != len(self.lines):
            raise MenuError("menu lines must be distinct")

    def __len__(self) -> int:
        return len(self.lines)

    def to_json(self) -> dict:
        return {"n_items": self.n_items, "U": fraction_str(self.U), "lines": [l.to_json() for l in self.lines]}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Menu":
        return cls(int(obj["n_items"]), to_fraction(obj["U"]), tuple(MenuLine.from_json(l) for l in obj["lines"]))


@dataclass(frozen=True)
class NormalizedLine:
    """A line whose payment is ``U`` with probability ``pay_prob`` and zero otherwise."""

    pay_prob: Fraction
    item_probs: Optional[tuple[Fraction, ...]] = None
    bundle_dist: Optional[tuple[tuple[int, Fraction], ...]] = None

    def payment(self, U: Fraction) -> Fraction:
        return self.pay_prob * U


@dataclass(frozen=True)
class NormalizedMenu:
    n_items: int
    U: Fraction
    lines: tuple[NormalizedLine, ...]
    source: Optional[Menu] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.lines)

    def denormalize(self) -> Menu:
        return Menu(
            self.n_items,
            self.U,
            tuple(MenuLine(l.pay_prob * self.U, l.item_probs, l.bundle_dist) for l in self.lines),
        )


def normalize_payments(menu: Menu) -> NormalizedMenu:
    """Replace each payment ``P`` by paying ``U`` with probability ``P / U``."""
    lines = []
    for k, line in enumerate(menu.lines):
        if line.payment > menu.U:
            raise PaymentExceedsCap(f"line {k} pays {line.payment} > U = {menu.U}")
        lines.append(NormalizedLine(line.payment / menu.U, line.item_probs, line.bundle_dist))
    return NormalizedMenu(menu.n_items, menu.U, tuple(lines), source=menu)


def utility(v: Valuation, line: MenuLine) -> Fraction:
    """Risk-neutral quasi-linear utility of taking ``line``."""
    if line.bundle_dist is not None:
        value = sum((p * v.value(mask) for mask, p in line.bundle_dist), Fraction(0))
    elif v.kind == ADDITIVE or not any(line.item_probs):
        value = sum((vi * p for vi, p in zip(v.values, line.item_probs)), Fraction(0))
    else:
        raise FormMismatch(f"{v.kind} utility needs a bundle_dist, not item marginals")
    return value - line.payment


def best_response(v: Valuation, menu: Menu) -> int:
    """Index of the utility-maximizing line; ties go to the lowest index."""
    best, best_u = 0, None
    for k, line in enumerate(menu.lines):
        u = utility(v, line)
        if best_u is None or u > best_u:
            best, best_u = k, u
    return best


@dataclass(frozen=True)
class Prior:
    """A finite distribution over buyer types."""

    types: tuple[tuple[Fraction, Valuation], ...]

    def __post_init__(self):
        types = tuple((to_fraction(w), v) for w, v in self.types)
        if not types:
            raise ValueError("a prior needs at least one type")
        if any(w < 0 for w, _ in types) or sum(w for w, _ in types) != 1:
            raise ValueError("prior weights must be non-negative and sum to 1")
        object.__setattr__(self, "types", types)

    @classmethod
    def uniform(cls, valuations: Sequence[Valuation]) -> "Prior":
        w = Fraction(1, len(valuations))
        return cls(tuple((w, v) for v in valuations))

    def __iter__(self):
        return iter(self.types)

    def __len__(self) -> int:
        return len(self.types)

    def to_json(self) -> dict:
        return {"types": [{"weight": fraction_str(w), "valuation": v.to_json()} for w, v in self.types]}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Prior":
        return cls(tuple((to_fraction(t.get("weight", 1)), Valuation.from_json(t["valuation"])) for t in obj["types"]))


def load_json(path) -> Any:
    with open(path) as fh:
        return json.load(fh)


def dump_json(obj: Any, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def random_menu(
    rng: random.Random,
    n_items: int,
    n_lines: int,
    bits: int = 16,
    kind: str = "items",
    U: Number = 1,
    support: int = 3,
) -> Menu:
    """A random menu with ``bits``-bit dyadic probabilities and payments, zero line first.

    ``kind="items"`` draws per-item marginals; ``kind="bundles"`` draws lotteries over
    at most ``support`` bundles. Duplicate lines are dropped, so the menu may be shorter.
    """
    U = to_fraction(U)
    d = 1 << bits
    lines = [zero_line(n_items)]
    for _ in range(n_lines - 1):
        pay = Fraction(rng.randrange(d + 1), d) * U
        if kind == "items":
            lines.append(MenuLine.items([Fraction(rng.randrange(d + 1), d) for _ in range(n_items)], pay))
        else:
            masks = rng.sample(range(1 << n_items), min(support, 1 << n_items))
            cuts = sorted(rng.randrange(d + 1) for _ in range(len(masks) - 1))
            edges = [0] + cuts + [d]
            dist = {m: Fraction(edges[i + 1] - edges[i], d) for i, m in enumerate(masks)}
            lines.append(MenuLine.bundles(dist, pay))
    uniq = list(dict.fromkeys(lines))
    return Menu(n_items, U, tuple(uniq))
