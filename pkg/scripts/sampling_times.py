"""Spread of MC consensus quality versus the number of samples, on a trained toy checkpoint."""

import argparse
from pathlib import Path

from probenhance.experiments import sampling_times_study, toy_test_pairs
from probenhance.trainer import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint", type=Path)
    ap.add_argument("--counts", type=int, nargs="+", default=[1, 2, 4, 8, 16, 20])
    ap.add_argument("--repetitions", type=int, default=10)
    ap.add_argument("--images", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = load_checkpoint(args.checkpoint)
    res = sampling_times_study(model, toy_test_pairs(args.images), tuple(args.counts),
                               args.repetitions, args.seed)
    print(f"{'S':>4} {'std PSNR':>10} {'std SSIM':>10} {'pixel var':>12}")
    for s in res.sample_counts:
        print(f"{s:>4} {res.std_psnr[s]:>10.4f} {res.std_ssim[s]:>10.4f} {res.pixel_var[s]:>12.3e}")
    first = res.sample_counts[0]
    for s in res.sample_counts[1:]:
        print(f"variance ratio S={first}/S={s}: {res.pixel_var[first] / res.pixel_var[s]:.2f} "
              f"(1/S law predicts {s / first:.0f})")


if __name__ == "__main__":
    main()
