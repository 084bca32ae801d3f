"""Distinct-mode counts on the particle system with and without input masking, per seed."""

import argparse
import logging

from ckn import cli, experiments
from ckn.dataio import MaskParams


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--cache", default=".ckn_cache")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cache = None if args.cache == "off" else args.cache

    masked = experiments.run_system(cli.profile("particles"), cache)
    plain = experiments.run_system(cli.profile("particles", training={"mask": vars(MaskParams.disabled())}), cache)
    print("seed  masked  unmasked   frequencies (masked | unmasked)")
    for seed, (a, b) in enumerate(zip(masked.models, plain.models)):
        ra, sa = experiments.mode_table(masked, a)
        rb, sb = experiments.mode_table(plain, b)
        fa = [round(ra[i].frequency, 2) for i in sa]
        fb = [round(rb[i].frequency, 2) for i in sb]
        print(f"{seed:>4}  {len(sa):>6}  {len(sb):>8}   {fa} | {fb}")


if __name__ == "__main__":
    main()
