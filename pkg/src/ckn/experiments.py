"""End-to-end system runs shared by the acceptance suite and the scripts.

Trained restarts can be cached on disk, keyed by the resolved run configuration
and a digest of this package's source, so a changed config or changed code never
reuses stale weights.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import cli, dataio, koopman, modal, train
from .cli import RunConfig
from .net import CKN
from .synth import VideoClip

log = logging.getLogger(__name__)

SRC = Path(__file__).resolve().parent


def code_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(SRC.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def run_key(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True) + code_digest()
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SystemRun:
    cfg: RunConfig
    clips: list[VideoClip]
    pre: dataio.Preprocessor
    models: list[CKN | None]
    final_totals: list[float]
    best: int

    @property
    def model(self) -> CKN:
        return self.models[self.best]

    @property
    def prepared(self) -> list[VideoClip]:
        return [self.pre.apply(c) for c in self.clips]


def run_system(cfg: RunConfig, cache_dir: str | Path | None = None) -> SystemRun:
    """Generate the profile's clips and train best-of-restarts, reusing a cached run when present."""
    clips = cli.generate_clips(cfg)
    if cache_dir is not None:
        run_dir = Path(cache_dir) / f"{cfg.system}-{run_key(cfg)}"
        meta_path = run_dir / "meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            models = [
                train.load_checkpoint(run_dir / f"restart_{i}.pt") if ok else None
                for i, ok in enumerate(meta["ok"])
            ]
            log.info("reusing cached run %s", run_dir)
            pre = dataio.Preprocessor.fit(clips)
            return SystemRun(cfg, clips, pre, models, meta["final_totals"], meta["best"])
    result, pre = cli.fit(cfg, clips)
    run = SystemRun(cfg, clips, pre, result.models, result.final_totals, result.best_restart)
    if cache_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(run.models):
            if m is not None:
                train.save_checkpoint(m, run_dir / f"restart_{i}.pt", train_config=cfg.training)
        meta = {"ok": [m is not None for m in run.models], "final_totals": run.final_totals, "best": run.best,
                "run_config": cfg.to_dict()}
        meta_path.write_text(json.dumps(meta, indent=2))
    return run


def mode_table(run: SystemRun, model: CKN | None = None, k: int | None = None):
    """``(reports, selected)`` for the first clip, with selection flags set."""
    model = model or run.model
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cli.analyse(model, run.clips[0], run.pre, run.cfg, k)


def selected_frequencies(reports: list[modal.ModeReport], selected: list[int]) -> list[float]:
    return [reports[i].frequency for i in selected]


def frequency_errors(found: list[float], truth: list[float]) -> list[float]:
    matched = modal.match_frequencies(found, truth)
    return [abs(f - t) if np.isfinite(f) else np.inf for f, t in zip(matched, truth)]


# ----------------------------------------------------------------- pendulum


@torch.no_grad()
def predict_ahead(model: CKN, clip: VideoClip, keep, horizon: int, stack: int, batch: int = 128) -> np.ndarray:
    """Decoded stacks ``horizon`` steps after every valid start, using only the ``keep`` pairs.

    Returns ``(n, h, w, c*stack)`` aligned with stacks ``horizon .. horizon + n - 1``.
    """
    model.eval()
    keep = set(keep)
    x = torch.from_numpy(dataio.stack_frames(clip.frames, stack).astype(np.float32))
    n = len(x) - horizon
    out = []
    for i in range(0, n, batch):
        y1 = model.encode(x[i : min(i + batch, n)])
        y = model.rollout(y1, horizon, clip.dt)[-1]
        out.append(model.decode(koopman.null_modes(y, keep)).double().numpy())
    return np.concatenate(out)


def dominant_mode(run: SystemRun) -> int:
    """Pair with the largest decoded energy, averaged over every clip of the run."""
    energy = np.zeros(run.model.cfg.n_pairs)
    for clip in run.prepared:
        ys, _ = modal.embed_clip(run.model, clip, run.cfg.stack)
        sub = np.linspace(0, len(ys) - 1, min(128, len(ys))).astype(int)
        energy += modal.mode_energies(run.model, ys[sub])
    return int(np.argmax(energy))


def pendulum_scores(run: SystemRun, horizon: int | None = None) -> list[dict]:
    """Per-clip MSE of the single-mode CKN forecast and of the repeat-last-frame baseline.

    Both are scored on the newest frame of the target stack, ``horizon`` frames after
    the last input frame.
    """
    horizon = horizon or run.cfg.training.T
    stack = run.cfg.stack
    keep = dominant_mode(run)
    rows = []
    for raw, clip in zip(run.clips, run.prepared):
        pred = predict_ahead(run.model, clip, {keep}, horizon, stack)[..., -1]
        n = len(pred)
        last_input = clip.frames[stack - 1 : stack - 1 + n, ..., 0]
        target = clip.frames[stack - 1 + horizon : stack - 1 + horizon + n, ..., 0]
        rows.append(
            {
                "initial_angle": raw.meta["spec"]["initial_angle"] if raw.meta else None,
                "mode": keep,
                "ckn_mse": float(np.mean((pred - target) ** 2)),
                "persistence_mse": float(np.mean((last_input - target) ** 2)),
            }
        )
    return rows
