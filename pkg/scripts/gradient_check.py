"""Finite-difference check of the full objective on the reduced double-precision model."""

import argparse

from probenhance.gradcheck import reduced_model_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    entries = reduced_model_check(args.count, args.seed)
    for e in entries:
        print(f"{e.name:<40} {str(e.index):<18} analytic {e.analytic:+.6e} numeric {e.numeric:+.6e} "
              f"rel {e.rel_error:.2e}")
    print(f"max relative error {max(e.rel_error for e in entries):.2e}")


if __name__ == "__main__":
    main()
