"""Check exact B_T and V_T against their closed forms over every row's parameter grid."""

import argparse
import time

from schedsgd.bounds import REL_TOL, bound_B, bound_V, exact_B, exact_V
from schedsgd.grids import ROWS, row_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--row", choices=ROWS, action="append", help="restrict to these rows")
    args = ap.parse_args()

    print("row,plans,violations,max_B_ratio,max_V_ratio,seconds")
    total_bad = 0
    for row in args.row or ROWS:
        t0 = time.perf_counter()
        plans = row_grid(row)
        bad, rb, rv = 0, 0.0, 0.0
        for p in plans:
            b = exact_B(p) / bound_B(p)
            v = exact_V(p) / bound_V(p)
            rb, rv = max(rb, b), max(rv, v)
            bad += b > 1 + REL_TOL or v > 1 + REL_TOL
        total_bad += bad
        print(f"{row},{len(plans)},{bad},{rb:.6f},{rv:.6f},{time.perf_counter() - t0:.2f}")
    raise SystemExit(1 if total_bad else 0)


if __name__ == "__main__":
    main()
