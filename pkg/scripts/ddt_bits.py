"""Mean buyer bits of the two-item Beta(1, 2) protocol, per region."""

import argparse
import json
import time

from auctionwire.ddt import DdtTypeOracle, build_ddt, estimate_ddt_bits, expected_ab_bits, expected_prelim_bits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--bigU", type=int, default=1 << 20)
    ap.add_argument("--seed", type=int, default=7)
    a = ap.parse_args()

    oracle = DdtTypeOracle()
    t0 = time.perf_counter()
    est = estimate_ddt_bits(build_ddt(oracle, a.bigU), oracle, a.samples, a.seed)
    out = est.to_json()
    out["seconds"] = round(time.perf_counter() - t0, 1)
    out["exact"] = {
        "prelim_Z": float(expected_prelim_bits("Z")),
        "prelim_W": float(expected_prelim_bits("W")),
        "prelim_AB": float(expected_prelim_bits("AB")),
        "sub_AB_upper": float(expected_ab_bits(a.bigU)),
    }
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
