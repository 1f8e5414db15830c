"""Long-run noise floor of constant, cosine and polynomial-decay learning rates."""

import argparse

from schedsgd.bounds import limsup_factor
from schedsgd.studies import plateau_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eta", type=float, default=0.1)
    ap.add_argument("--b", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--p", type=float, default=2.0)
    args = ap.parse_args()

    res = plateau_comparison(eta=args.eta, b=args.b, epochs=args.epochs, seeds=args.seeds, p=args.p)
    print("family,plateau,se,limsup_factor")
    for name, m, s in zip(res.names, res.plateau, res.se):
        f = limsup_factor(name, args.eta, args.p if name == "polynomial_decay" else None)
        print(f"{name},{m:.6g},{s:.3g},{f:.6g}")


if __name__ == "__main__":
    main()
