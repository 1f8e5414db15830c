"""Constant vs exponentially growing learning rate on a shared batch-size trajectory."""

import argparse
import math

from schedsgd.studies import rate_separation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m-min", type=int, default=4)
    ap.add_argument("--m-max", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gamma", type=float, default=1.4)
    ap.add_argument("--eta", type=float, default=0.001)
    args = ap.parse_args()

    res = rate_separation(
        Ms=range(args.m_min, args.m_max + 1), seeds=args.seeds, seed=args.seed, gamma=args.gamma, eta=args.eta
    )
    print("M,constant_lr,constant_se,growing_lr,growing_se")
    for k, M in enumerate(res.M):
        print(f"{M},{res.constant_lr[k]:.6g},{res.constant_se[k]:.3g},{res.growing_lr[k]:.6g},{res.growing_se[k]:.3g}")
    print(f"# growing-LR slope per block {res.fit_growing.slope:.4f} (reference -ln(gamma)/2 = {-math.log(args.gamma) / 2:.4f})")
    print(f"# constant-LR slope per block {res.fit_constant.slope:.4f}")


if __name__ == "__main__":
    main()
