"""Train a profile best-of-restarts and print its mode table against ground truth.

    python scripts/run_system.py waves
    python scripts/run_system.py string --epochs 20 --restarts 1
"""

import argparse
import logging
import warnings

from ckn import cli, experiments, modal


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("system", choices=["waves", "particles", "string"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-mask", action="store_true")
    p.add_argument("--cache", default=".ckn_cache", help="cache directory, or 'off'")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    training = {k: v for k, v in (("epochs", args.epochs), ("restarts", args.restarts)) if v is not None}
    if args.no_mask:
        training["mask"] = {"min_squares": 0, "max_squares": 0}
    cfg = cli.profile(args.system, seed=args.seed, training=training)
    run = experiments.run_system(cfg, None if args.cache == "off" else args.cache)
    truth = run.clips[0].ground_truth
    print(f"final totals per restart: {[round(t, 5) for t in run.final_totals]}  best: {run.best}")
    for i, model in enumerate(run.models):
        if model is None:
            print(f"restart {i}: diverged")
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reports, sel = experiments.mode_table(run, model)
        found = experiments.selected_frequencies(reports, sel)
        print(f"\nrestart {i}{' (best)' if i == run.best else ''}")
        print(modal.format_table(reports, truth))
        print("matched:", [round(f, 3) for f in modal.match_frequencies(found, truth)])


if __name__ == "__main__":
    main()
