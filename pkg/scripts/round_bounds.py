"""Exact and measured expected rounds of the stream compiler against the recurrence bound."""

import argparse
import random

from auctionwire.menu import normalize_payments, random_menu
from auctionwire.stream import compile_additive, exact_expected_rounds, round_bound, run_stream_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--menus", type=int, default=10, help="random menus per n")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    rng = random.Random(a.seed)
    print(f"{'n':>3} {'exact max':>10} {'measured max':>13} {'bound':>7}")
    for n in (2, 4, 8, 16, 32):
        exact = measured = 0.0
        for k in range(a.menus):
            m = random_menu(rng, n - 1, 3, bits=16)
            line = normalize_payments(m).lines[-1]
            exact = max(exact, float(exact_expected_rounds(tuple(line.item_probs) + (line.pay_prob,))))
            r = run_stream_batch(compile_additive(m), len(m.lines) - 1, a.trials, seed=a.seed * 1000 + k)["rounds"]
            measured = max(measured, float(r.mean()))
        print(f"{n:>3} {exact:>10.3f} {measured:>13.3f} {round_bound(n):>7.3f}")


if __name__ == "__main__":
    main()
