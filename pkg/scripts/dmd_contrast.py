"""Exact DMD on the direct-amplitude wave clip versus the rendered string, ranks 1-6."""

import numpy as np

from ckn import modal, synth


def main():
    for system in ("waves", "string"):
        clip = synth.generate(system, 2000)
        print(f"{system}: ground truth {clip.ground_truth} Hz")
        for rank in range(1, 7):
            res = modal.dmd(clip, rank)
            osc = modal.dmd_oscillatory(res)
            err = modal.dmd_reconstruction_error(clip, rank)
            freqs = ", ".join(f"{f:.3f}" for f, _ in osc) or "-"
            print(f"  rank {rank}: oscillatory {freqs:<30} max|lambda| {np.abs(res.eigenvalues).max():.4f}  "
                  f"rel. error {err:.3f}")


if __name__ == "__main__":
    main()
