"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line to ``RESULTS``; the lines are printed as they are
produced and again in pytest's terminal summary.
"""

import math
import random
import time
from fractions import Fraction as F

import numpy as np
import pytest

from auctionwire.audit import (
    brute_force_best,
    ic_audit,
    ic_audit_menu,
    materialize,
    outcome_law,
    random_tree,
    revenue_audit,
    tree_best_response,
    with_opt_out,
)
from auctionwire.cli import random_revenue_trees
from auctionwire.ddt import DdtTypeOracle, build_ddt, estimate_ddt_bits
from auctionwire.engine import run
from auctionwire.expost import expost_strategy, wrap_expost_ir, wrapper_bit_bound
from auctionwire.hard import (
    UNIT_DEMAND_PRESETS,
    XOS_PRESETS,
    deviation_table,
    nontruthful_impl_unit_demand,
    optimal_protocol_unit_demand,
    optimal_protocol_xos,
    unit_demand_family,
    xos_family,
)
from auctionwire.menu import Menu, MenuLine, Prior, Valuation, normalize_payments, random_menu, zero_line
from auctionwire.nonic import compile_nonic, demonstrate_cheat, q_squared_menu
from auctionwire.stream import (
    BundleMenu,
    compile_additive,
    compile_bundle,
    exact_expected_rounds,
    round_bound,
    run_stream_batch,
)
from auctionwire.symmetric import compile_symmetric, grid_values, sym_menu_from_lines

RESULTS: list[str] = []
SIGMAS = 4


def report(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def within(mean, exact, sd, trials):
    return abs(mean - exact) <= SIGMAS * sd / math.sqrt(trials) + 1e-12


# -- 1 ---------------------------------------------------------------------------------------


def test_outcome_equivalence():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    trials = 100_000
    checks = fails = 0
    for k in range(50):
        kind = "items" if k % 2 == 0 else "bundles"
        n = rng.randint(1, 8) if kind == "items" else rng.randint(1, 4)
        m = random_menu(rng, n, rng.randint(2, 32), bits=16, kind=kind)
        if kind == "items":
            p, menu = compile_additive(m), m
        else:
            bm = BundleMenu.from_menu(m)
            p, menu = compile_bundle(bm), bm.to_menu()
        for j, line in enumerate(menu.lines):
            out = run_stream_batch(p, j, trials, seed=1000 * k + j)
            for i, q in enumerate(line.marginals(n)):
                f = float(((out["alloc"] >> i) & 1).mean())
                checks += 1
                fails += not within(f, float(q), math.sqrt(float(q * (1 - q))), trials)
            q = line.payment / menu.U
            checks += 1
            fails += not within(float(out["payment"].mean()), float(line.payment), float(menu.U) * math.sqrt(float(q * (1 - q))), trials)
    dt = time.perf_counter() - t0
    ok = report(1, fails == 0 and dt < 60, f"{checks} frequency checks over 50 menus, {fails} outside 4 sigma, {dt:.1f}s (limit 60s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------------------


def _mean_rounds(p, line, trials, seed):
    r = run_stream_batch(p, line, trials, seed)["rounds"]
    return float(r.mean()), float(r.std())


def test_round_oracle_and_bound():
    rng = random.Random(77)
    trials = 20_000
    fails = 0
    for k in range(100):
        n = 1 if k < 50 else rng.randint(2, 4)
        m = random_menu(rng, n, rng.randint(2, 6), bits=rng.choice((1, 2, 4, 8, 16)))
        p, nm = compile_additive(m), normalize_payments(m)
        j = rng.randrange(len(m.lines))
        line = nm.lines[j]
        exact = float(exact_expected_rounds(tuple(line.item_probs) + (line.pay_prob,)))
        mean, sd = _mean_rounds(p, j, trials, seed=k)
        fails += not within(mean, exact, sd, trials)
    bound_rows, bound_ok = [], True
    for n in (2, 4, 8, 16):
        worst = 0.0
        for k in range(10):
            # n streamed coordinates: n - 1 items and the payment
            m = random_menu(rng, n - 1, 3, bits=16)
            p = compile_additive(m)
            worst = max(worst, _mean_rounds(p, len(m.lines) - 1, trials, seed=10_000 * n + k)[0])
        bound_rows.append(f"n={n}: {worst:.3f} <= {round_bound(n):.3f}")
        bound_ok &= worst <= round_bound(n)
    ok = report(2, fails == 0 and bound_ok, f"100 menus, {fails} rounds means outside 4 sigma; max measured means {'; '.join(bound_rows)}")
    assert ok


# -- 3 ---------------------------------------------------------------------------------------


def test_ic_audits():
    rng = random.Random(5)
    verdicts = {"additive": [], "bundle": [], "symmetric": []}
    for k in range(6):
        n = rng.randint(1, 2)
        m = random_menu(rng, n, 4, bits=3)
        prior = Prior.uniform([Valuation.additive([F(rng.randrange(9), 4) for _ in range(n)]) for _ in range(4)])
        verdicts["additive"].append(ic_audit_menu(compile_additive(m), m, prior, depth=6).stats["max_gap"])
        mb = random_menu(rng, n, 4, bits=3, kind="bundles")
        bm = BundleMenu.from_menu(mb)
        prior_b = Prior.uniform([Valuation.unit_demand([F(rng.randrange(9), 4) for _ in range(n)]) for _ in range(4)])
        verdicts["bundle"].append(ic_audit_menu(compile_bundle(bm), bm.to_menu(), prior_b, depth=6).stats["max_gap"])
    half = F(1, 2)
    g = grid_values(half, 2)
    z = len(g) - 1
    sm = sym_menu_from_lines(2, half, [(0, [[0, 1]], [{z: 2}]), (F(1, 4), [[0, 1]], [{1: 1, z: 1}]), (F(1, 2), [[0], [1]], [{1: 1}, {2: 1}])])
    for vals in ([1, 0], [0, 1], [1, 1], [F(1, 4), F(3, 4)]):
        verdicts["symmetric"].append(ic_audit(compile_symmetric(sm), Prior.uniform([Valuation.unit_demand(vals)])).stats["max_gap"])
    stream_ok = all(gap == 0 for gaps in verdicts.values() for gap in gaps)

    q2 = q_squared_menu(k=3, bits=20)
    nonic = ic_audit_menu(compile_nonic(q2), q2.to_menu(), Prior.uniform([Valuation.additive([F(4, 3)])]), depth=6)
    hp = unit_demand_family(UNIT_DEMAND_PRESETS[16], 1, seed=16)[0]
    short = ic_audit(nontruthful_impl_unit_demand(hp), hp.prior)
    controls_ok = nonic.verdict == "non-IC" and short.verdict == "non-IC"
    ok = report(
        3,
        stream_ok and controls_ok,
        f"{sum(map(len, verdicts.values()))} compiler audits with max exact gap {max(max(v) for v in verdicts.values())}; "
        f"nonic {nonic.verdict} (gap {nonic.stats['max_gap']}), short unit-demand {short.verdict} (gap {short.stats['max_gap']})",
    )
    assert ok


# -- 4 ---------------------------------------------------------------------------------------


def test_ddt_bits():
    t0 = time.perf_counter()
    oracle = DdtTypeOracle()
    est = estimate_ddt_bits(build_ddt(oracle, 1 << 20), oracle, 1_000_000, seed=7)
    dt = time.perf_counter() - t0
    r = est.per_region
    zw = [r[g]["mean_prelim_bits"] for g in ("Z", "W")]
    ab_pre, ab_sub = r["AB"]["mean_prelim_bits"], r["AB"]["mean_sub_bits"]
    ok = (
        all(abs(x - 1.99) <= 0.005 for x in zw)
        and ab_sub <= 0.94 + 0.01
        and r["AB"]["mean_bits"] <= 0.94 + 0.01 + 1.02
        and est.overall_mean < 2.0
        and dt < 300
    )
    report(
        4,
        ok,
        f"Z/W prelim {zw[0]:.4f}/{zw[1]:.4f}; A+B prelim {ab_pre:.4f} + sub {ab_sub:.4f}; overall {est.overall_mean:.4f} "
        f"+- {est.overall_se:.4f}; {dt:.0f}s (limit 300s)",
    )
    assert ok


# -- 5 ---------------------------------------------------------------------------------------


def test_cheat_example():
    rep = demonstrate_cheat()
    ok = rep.honest_low == F(4, 9) and rep.deviation_low == F(5, 6)
    report(5, ok, f"honest {rep.honest_low}, deviation {rep.deviation_low} after the first threshold bit is 0")
    assert ok


# -- 6 ---------------------------------------------------------------------------------------


def test_expost_ir():
    rng = random.Random(61)
    eps = F(1, 1024)
    runs = 400
    trees = bad_regret = bad_pay = bad_bits = 0
    while trees < 20:
        t = with_opt_out(random_tree(rng, n_items=2, max_depth=6, max_leaves=48, p_chance=0.45))
        C = t.chance_nodes()
        if not 2 <= C <= 8:
            continue
        trees += 1
        v = Valuation.additive([F(rng.randrange(5), 8), F(rng.randrange(5), 8)])
        U = F(1)
        br = tree_best_response(t, v)
        w = wrap_expost_ir(t, eps, U)
        s = expost_strategy(w, br.strategy(), v)
        pays, bits = [], 0
        for seed in range(runs):
            tr = run(w, s, seed=f"{trees}:{seed}")
            u = v.value(tr.alloc) - tr.payment
            bad_regret += abs(u - tr.extra["ubar"]) > eps
            pays.append(float(tr.payment))
            bits = max(bits, tr.extra["wrapper_bits"])
        pays = np.asarray(pays)
        bad_pay += not within(float(pays.mean()), float(br.revenue), float(pays.std()), runs)
        bad_bits += bits > wrapper_bit_bound(C, U, eps)
    ok = report(6, bad_regret == bad_pay == bad_bits == 0, f"20 trees x {runs} runs: {bad_regret} regret violations, {bad_pay} payment means off, {bad_bits} bit-bound violations")
    assert ok


# -- 7 ---------------------------------------------------------------------------------------

# frozen after the first run: largest number of priors (out of 32) on which one audited
# depth-6 tree reaches 0.99 of welfare, over 32 trees from seed 7
REVENUE_GOLDEN = 0


def test_hard_families():
    problems = []
    for n in (16, 32, 64):
        for hp in unit_demand_family(UNIT_DEMAND_PRESETS[n], 2, seed=n):
            hp.design.verify()
            p = optimal_protocol_unit_demand(hp)
            for row in deviation_table(hp, p):
                if not (row.best_design_deviation < row.honest == 0 and row.worst_margin <= 0):
                    problems.append(f"unit-demand n={n} type {row.type_index}")
                if row.best_design_deviation > F(11, 100) - F(1, 2):
                    problems.append(f"unit-demand n={n} above 0.11 - 0.5")
            if revenue_audit(materialize(p), [hp])["fractions"] != [1]:
                problems.append(f"unit-demand n={n} revenue")
            short = nontruthful_impl_unit_demand(hp)
            for _, v in hp.prior:
                if outcome_law(p, p.meta["honest"](v)) != outcome_law(short, short.meta["honest"](v)):
                    problems.append(f"short law n={n}")
        for hp in xos_family(XOS_PRESETS[n], 1, seed=n):
            hp.design.verify()
            hp.clauses.verify()
            p = optimal_protocol_xos(hp)
            for row in deviation_table(hp, p):
                if not (row.best_design_deviation < row.honest == 0 and row.worst_margin <= 0):
                    problems.append(f"xos n={n} type {row.type_index}")
            if revenue_audit(materialize(p), [hp])["fractions"] != [1]:
                problems.append(f"xos n={n} revenue")

    priors = unit_demand_family(UNIT_DEMAND_PRESETS[16], 32, seed=7)
    hits = []
    for t in random_revenue_trees(16, 32, seed=7, depth=6):
        fr = revenue_audit(t, priors)["fractions"]
        hits.append(sum(f >= F(99, 100) for f in fr))
    soft = max(hits) <= 1
    frozen = REVENUE_GOLDEN is None or max(hits) == REVENUE_GOLDEN
    ok = report(
        7,
        not problems and frozen,
        f"designs, IC and full revenue at n=16/32/64 ({len(problems)} problems); "
        f"revenue audit (soft, seed 7): at most {max(hits)} of 32 priors at >= 0.99 per tree, {'within' if soft else 'above'} the limit of 1",
    )
    assert ok, problems


# -- 8 ---------------------------------------------------------------------------------------


def test_best_response_vs_brute_force():
    rng = random.Random(88)
    mismatches = 0
    for _ in range(200):
        t = random_tree(rng, n_items=2, max_depth=6, max_leaves=64)
        v = Valuation.additive([F(rng.randrange(17), 8), F(rng.randrange(17), 8)])
        mismatches += tree_best_response(t, v).value != brute_force_best(t, v)[0]
    ok = report(8, mismatches == 0, f"200 random trees (<= 64 leaves), {mismatches} exact mismatches")
    assert ok
