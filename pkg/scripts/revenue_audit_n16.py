"""Revenue of random depth-6 trees on the n=16 unit-demand priors, as a fraction of welfare."""

import argparse
from fractions import Fraction

from auctionwire.audit import materialize, revenue_audit
from auctionwire.cli import random_revenue_trees
from auctionwire.hard import UNIT_DEMAND_PRESETS, optimal_protocol_unit_demand, unit_demand_family


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--priors", type=int, default=32)
    ap.add_argument("--trees", type=int, default=32)
    ap.add_argument("--seed", type=int, default=7)
    a = ap.parse_args()

    priors = unit_demand_family(UNIT_DEMAND_PRESETS[16], a.priors, a.seed)
    own = revenue_audit(materialize(optimal_protocol_unit_demand(priors[0])), priors[:1])
    print(f"optimal protocol on its own prior: fraction {float(own['fractions'][0]):.3f}")
    print(f"{'tree':>4} {'min':>6} {'mean':>6} {'max':>6} {'>=0.99':>7}")
    for j, t in enumerate(random_revenue_trees(16, a.trees, a.seed, depth=6)):
        r = revenue_audit(t, priors)
        hits = sum(f >= Fraction(99, 100) for f in r["fractions"])
        print(f"{j:>4} {float(r['min']):>6.3f} {float(r['mean']):>6.3f} {float(r['max']):>6.3f} {hits:>7}")


if __name__ == "__main__":
    main()
