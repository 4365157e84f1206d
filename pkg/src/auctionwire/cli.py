"""Command-line front end.

Subcommands: run, audit-ic, audit-revenue, gen-hard, ddt, nonic-demo. Exit codes:
0 on success (or a passing audit), 1 on a failing audit, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .dyadic import fraction_str, to_fraction


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int
    trials: int = 1
    inputs: dict = field(default_factory=dict)
    out: Optional[str] = None
    fmt: str = "json"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")


class UsageError(Exception):
    pass


def _jsonable(x):
    if isinstance(x, Fraction):
        return fraction_str(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item") and callable(x.item):
        return x.item()
    return x


def _emit(obj, out: Optional[str], fmt: str = "json") -> None:
    if fmt == "csv":
        rows = obj if isinstance(obj, list) else [obj]
        buf = io.StringIO()
        keys = sorted({k for r in rows for k in r})
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(_jsonable(r.get(k)), sort_keys=True) if isinstance(r.get(k), (list, dict)) else _jsonable(r.get(k)) for k in keys})
        text = buf.getvalue()
    else:
        text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load(path: str):
    with open(path) as fh:
        return json.load(fh)


def _load_prior(path: str):
    from .menu import Prior

    obj = _load(path)
    if isinstance(obj, list):
        return [Prior.from_json(o) for o in obj]
    if "priors" in obj:
        return [Prior.from_json(o) for o in obj["priors"]]
    return Prior.from_json(obj)


def _compile(mech: dict, compiler: str):
    """Returns (protocol, menu or None)."""
    from .menu import Menu
    from .nonic import compile_nonic
    from .stream import BundleMenu, compile_additive, compile_bundle
    from .symmetric import SymMenu, compile_symmetric

    if "delta" in mech:
        return compile_symmetric(SymMenu.from_json(mech)), None
    menu = Menu.from_json(mech)
    if compiler == "auto":
        compiler = "additive" if all(l.item_probs is not None for l in menu.lines) else "bundle"
    if compiler == "additive":
        return compile_additive(menu), menu
    bm = BundleMenu.from_menu(menu)
    if compiler == "bundle":
        return compile_bundle(bm), bm.to_menu()
    if compiler == "nonic":
        return compile_nonic(bm), bm.to_menu()
    raise UsageError(f"unknown compiler {compiler!r}")


def cmd_run(a) -> int:
    from .audit import materialize, mc_outcome
    from .engine import run
    from .expost import expost_strategy, wrap_expost_ir

    p, menu = _compile(_load(a.mechanism), a.compiler)
    prior = _load_prior(a.prior)
    rows = []
    for k, (w, v) in enumerate(prior):
        s = p.meta["honest"](v)
        if a.expost_eps is None:
            st = mc_outcome(p, s, a.trials, a.seed + k)
            rows.append({"type": k, "weight": w, **st.to_json()})
            continue
        eps = to_fraction(a.expost_eps)
        tree = materialize(p, max_rounds=a.rounds)
        # the wrapper's range must cover utilities, which can exceed the payment cap
        bound = max(p.U, max(u.grand_value() for _, u in prior))
        wrapped = wrap_expost_ir(tree, eps, bound)
        ws = expost_strategy(wrapped, s, v)
        lo = hi = None
        pay = 0.0
        for t in range(a.trials):
            tr = run(wrapped, ws, seed=f"{a.seed + k}:{t}")
            gap = v.value(tr.alloc) - tr.payment - tr.extra["ubar"]
            lo = gap if lo is None or gap < lo else lo
            hi = gap if hi is None or gap > hi else hi
            pay += float(tr.payment)
        rows.append({"type": k, "weight": w, "trials": a.trials, "mean_payment": pay / a.trials, "min_regret_offset": lo, "max_regret_offset": hi, "eps": eps})
    _emit(rows if a.format == "csv" else {"types": rows}, a.out, a.format)
    return 0


def cmd_audit_ic(a) -> int:
    from .audit import ic_audit, ic_audit_menu

    p, menu = _compile(_load(a.mechanism), a.compiler)
    prior = _load_prior(a.prior)
    if menu is None:
        rep = ic_audit(p, prior)
    else:
        prune = (lambda leaf: "inconsistent" in leaf.flags) if a.prune else None
        rep = ic_audit_menu(p, menu, prior, depth=a.depth, prune=prune)
    _emit(rep.to_json(), a.out)
    return 0 if rep.verdict == "IC" else 1


def random_revenue_trees(n_items: int, count: int, seed: int, depth: int = 6):
    """Seeded random interim-IR trees of the given depth with payments on a 1/8 grid."""
    from .audit import ENode, ExplicitTree, with_opt_out

    rng = random.Random(seed)

    def build(d):
        if d == 0 or rng.random() < 0.15:
            return ENode.leaf(rng.getrandbits(n_items), Fraction(rng.randrange(9), 8))
        kids = [build(d - 1), build(d - 1)]
        if rng.random() < 0.2:
            return ENode.chance(kids, [Fraction(1, 2), Fraction(1, 2)])
        return ENode.buyer(kids)

    # the root offers the empty outcome, so every tree is interim IR and revenue <= welfare
    return [with_opt_out(ExplicitTree(build(depth - 1), n_items, Fraction(1))) for _ in range(count)]


def cmd_audit_revenue(a) -> int:
    from .audit import ExplicitTree, revenue_audit
    from .hard import UNIT_DEMAND_PRESETS, XOS_PRESETS, unit_demand_family, xos_family

    if a.prior:
        priors = _load_prior(a.prior)
        priors = priors if isinstance(priors, list) else [priors]
    else:
        if a.family == "unit-demand":
            priors = unit_demand_family(UNIT_DEMAND_PRESETS[a.n], a.priors, a.seed)
        else:
            priors = xos_family(XOS_PRESETS[a.n], a.priors, a.seed)
    if a.tree:
        trees = [ExplicitTree.from_json(_load(a.tree))]
    else:
        trees = random_revenue_trees(a.n, a.random_trees, a.seed, a.depth)
    report = []
    for j, t in enumerate(trees):
        r = revenue_audit(t, priors)
        hits = sum(1 for f in r["fractions"] if f >= Fraction(99, 100))
        report.append({"tree": j, "fractions": [float(f) for f in r["fractions"]], "min": float(r["min"]), "mean": float(r["mean"]), "max": float(r["max"]), "priors_at_0.99": hits})
    _emit({"seed": a.seed, "trees": report, "max_priors_at_0.99": max(r["priors_at_0.99"] for r in report)}, a.out)
    return 0


def cmd_gen_hard(a) -> int:
    from .hard import UNIT_DEMAND_PRESETS, XOS_PRESETS, UnitDemandPreset, XosPreset, unit_demand_family, xos_family

    if a.family == "unit-demand":
        base = UNIT_DEMAND_PRESETS.get(a.n, UnitDemandPreset(a.n))
        preset = UnitDemandPreset(
            a.n,
            to_fraction(a.eps1) if a.eps1 else base.eps1,
            to_fraction(a.delta1) if a.delta1 else base.delta1,
            to_fraction(a.eps2) if a.eps2 else base.eps2,
            a.ell or base.ell,
            to_fraction(a.eta) if a.eta else base.eta,
            a.count or base.count,
        )
        fam = unit_demand_family(preset, a.priors, a.seed)
    else:
        base = XOS_PRESETS.get(a.n, XosPreset(a.n, 16))
        preset = XosPreset(a.n, base.b, count=a.count or base.count)
        fam = xos_family(preset, a.priors, a.seed)
    obj = fam[0].to_json() if len(fam) == 1 else {"priors": [hp.to_json() for hp in fam]}
    _emit(obj, a.out)
    return 0


def cmd_ddt(a) -> int:
    from .ddt import DdtTypeOracle, build_ddt, estimate_ddt_bits

    oracle = DdtTypeOracle()
    p = build_ddt(oracle, a.bigU)
    est = estimate_ddt_bits(p, oracle, a.samples, a.seed)
    _emit({"seed": a.seed, "bigU": a.bigU, **est.to_json()}, a.out)
    return 0


def cmd_nonic_demo(a) -> int:
    from .nonic import demonstrate_cheat

    rep = demonstrate_cheat(to_fraction(a.value))
    _emit(rep.to_json(), a.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="auctionwire", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", help="output path (default: stdout)")

    r = sub.add_parser("run", help="Monte Carlo runs of a compiled mechanism under honest play")
    r.add_argument("--mechanism", required=True)
    r.add_argument("--prior", required=True)
    r.add_argument("--trials", type=int, default=100_000)
    r.add_argument("--compiler", choices=["auto", "additive", "bundle", "nonic"], default="auto")
    r.add_argument("--expost-eps", dest="expost_eps", help="wrap for ex-post eps-IR (e.g. 1/1024)")
    r.add_argument("--rounds", type=int, default=4, help="round cutoff when materializing for the wrapper")
    r.add_argument("--format", choices=["json", "csv"], default="json")
    common(r)
    r.set_defaults(func=cmd_run)

    ic = sub.add_parser("audit-ic", help="exact incentive audit")
    ic.add_argument("--mechanism", required=True)
    ic.add_argument("--prior", required=True)
    ic.add_argument("--compiler", choices=["auto", "additive", "bundle", "nonic"], default="auto")
    ic.add_argument("--depth", type=int, default=6)
    ic.add_argument("--prune", action="store_true", help="drop announcements no line can produce")
    common(ic, seed=False)
    ic.set_defaults(func=cmd_audit_ic)

    rv = sub.add_parser("audit-revenue", help="revenue of explicit trees on hard priors")
    rv.add_argument("--tree")
    rv.add_argument("--prior")
    rv.add_argument("--family", choices=["unit-demand", "xos"], default="unit-demand")
    rv.add_argument("--n", type=int, default=16)
    rv.add_argument("--priors", type=int, default=32)
    rv.add_argument("--random-trees", dest="random_trees", type=int, default=8)
    rv.add_argument("--depth", type=int, default=6)
    common(rv)
    rv.set_defaults(func=cmd_audit_revenue)

    g = sub.add_parser("gen-hard", help="generate a hard prior family")
    g.add_argument("--family", choices=["unit-demand", "xos"], required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--priors", type=int, default=1)
    g.add_argument("--count", type=int)
    g.add_argument("--eps1")
    g.add_argument("--delta1")
    g.add_argument("--eps2")
    g.add_argument("--ell", type=int)
    g.add_argument("--eta")
    common(g)
    g.set_defaults(func=cmd_gen_hard)

    d = sub.add_parser("ddt", help="buyer bits of the two-item Beta(1,2) protocol")
    d.add_argument("--samples", type=int, default=100_000)
    d.add_argument("--bigU", type=int, default=1 << 20)
    common(d)
    d.set_defaults(func=cmd_ddt)

    nd = sub.add_parser("nonic-demo", help="profitable deviation against the non-IC protocol")
    nd.add_argument("--value", default="4/3")
    common(nd, seed=False)
    nd.set_defaults(func=cmd_nonic_demo)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return a.func(a)
    except (UsageError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"auctionwire {a.cmd}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
