"""Single-mode CKN forecast on the pendulum amplitude sweep against the persistence baseline."""

import argparse
import logging

from ckn import cli, experiments, modal


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epochs", type=int)
    p.add_argument("--cache", default=".ckn_cache")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    training = {"epochs": args.epochs} if args.epochs else {}
    run = experiments.run_system(cli.profile("pendulum", training=training), None if args.cache == "off" else args.cache)
    rows = experiments.pendulum_scores(run)
    print(f"retained pair {rows[0]['mode']}")
    print("angle  ckn_mse    persistence_mse  ratio")
    for r in rows:
        print(f"{r['initial_angle']:5.1f}  {r['ckn_mse']:.4g}  {r['persistence_mse']:.4g}  "
              f"{r['persistence_mse'] / r['ckn_mse']:.2f}")
    reports, _ = experiments.mode_table(run)
    print(modal.format_table(reports, run.clips[0].ground_truth))


if __name__ == "__main__":
    main()
