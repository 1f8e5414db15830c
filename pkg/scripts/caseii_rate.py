"""Min gradient norm vs T for a constant learning rate with doubling batch sizes."""

import argparse

from schedsgd.studies import caseii_rate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eta", type=float, default=0.1)
    ap.add_argument("--epochs", type=int, nargs="+", default=[5, 15, 50, 200, 800])
    args = ap.parse_args()

    res = caseii_rate(epochs=args.epochs, seeds=args.seeds, seed=args.seed, eta=args.eta)
    print("T,min_grad_norm,se")
    for T, m, s in zip(res.T, res.estimate, res.se):
        print(f"{T},{m:.6g},{s:.3g}")
    print(f"# log-log slope {res.fit.slope:.4f}, rms residual {res.fit.residual:.3g}")


if __name__ == "__main__":
    main()
