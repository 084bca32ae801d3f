"""Loss assembly, the optimisation loop and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from . import koopman
from .dataio import MaskParams, SnippetDataset
from .net import CKN, EncoderConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ckn-checkpoint/1"


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite value in loss term {term!r}")
        self.term = term


class Diverged(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    T: int = 3
    batch_size: int = 32
    epochs: int = 200
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    mask: MaskParams = field(default_factory=MaskParams)
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    restarts: int = 3
    patience: int = 20
    min_delta: float = 1e-4
    snippets_per_epoch: int | None = None
    freeze_eigvals: bool = False
    grad_clip: float | None = 10.0
    # "constant" or "cosine" (decays to lr * lr_final_frac at the last epoch)
    lr_schedule: str = "constant"
    lr_final_frac: float = 0.1
    divergence_factor: float = 1e3

    def __post_init__(self):
        if isinstance(self.mask, dict):
            self.mask = MaskParams(**self.mask)
        self.betas = tuple(self.betas)
        self.loss_weights = tuple(self.loss_weights)
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be non-negative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        lo = self.learning_rate * self.lr_final_frac
        return lo + 0.5 * (self.learning_rate - lo) * (1 + math.cos(math.pi * frac))

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    pred: torch.Tensor
    lin: torch.Tensor
    total: torch.Tensor

    def item(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("recon", "pred", "lin", "total")}


def _mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.mean((a - b) ** 2)


def compute_loss(
    model,
    masked_x1: torch.Tensor,
    x: torch.Tensor,
    dt: float,
    weights=(1.0, 1.0, 1.0),
    freeze: bool = False,
) -> LossBreakdown:
    """Reconstruction, prediction and linearity losses for a batch of windows.

    ``masked_x1`` is the (possibly occluded) encoder input ``(B, h, w, c)``; ``x`` holds the
    clean targets ``(B, T+1, h, w, c)``. ``model`` needs ``encode``, ``decode`` and ``eigvals``.
    """
    B, T1 = x.shape[:2]
    T = T1 - 1
    if T < 1:
        raise ValueError("need at least one prediction target")
    frame = x.shape[2:]
    enc = model.encode(torch.cat([masked_x1, x[:, 1:].reshape(B * T, *frame)]))
    y1, y_true = enc[:B], enc[B:].view(B, T, -1)
    y_pred = torch.stack(koopman.rollout(model.eigvals, y1, T, dt, freeze=freeze), 1)
    dec = model.decode(torch.cat([y1, y_pred.reshape(B * T, -1)]))
    recon = _mse(dec[:B], x[:, 0])
    pred = _mse(dec[B:].view(B, T, *frame), x[:, 1:])
    lin = _mse(y_pred, y_true)
    for name, v in (("recon", recon), ("pred", pred), ("lin", lin)):
        if not torch.isfinite(v):
            raise NonFiniteLoss(name)
    w_r, w_p, w_l = weights
    return LossBreakdown(recon, pred, lin, w_r * recon + w_p * pred + w_l * lin)


# ----------------------------------------------------------------------- loop


@dataclass
class TrainResult:
    model: CKN
    log: list[dict[str, Any]]
    restart_logs: list[list[dict[str, Any]]]
    best_restart: int
    final_totals: list[float]
    optimizer_state: dict | None = None
    # one entry per restart, None where the restart diverged
    models: list[CKN | None] = field(default_factory=list)


def _eig_snapshot(model: CKN, probe: torch.Tensor) -> dict[str, list[float]]:
    model.eval()
    with torch.no_grad():
        eig = model.eigvals(model.encode(probe))
    model.train()
    med = eig.median(dim=0).values
    return {"mu": med[:, 0].tolist(), "omega": med[:, 1].tolist()}


def train_once(
    dataset: SnippetDataset,
    model_cfg: EncoderConfig,
    config: TrainingConfig,
    seed: int,
    model: CKN | None = None,
    optimizer_state: dict | None = None,
    start_epoch: int = 0,
    log_path: Path | None = None,
) -> tuple[CKN, list[dict], dict]:
    """Single seeded training run. Raises :class:`Diverged` if the loss explodes."""
    torch.manual_seed(seed)
    if model is None:
        model = CKN(model_cfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    probe_idx = np.linspace(0, len(dataset) - 1, min(64, len(dataset))).astype(int)
    probe = torch.from_numpy(dataset.windows(probe_idx)[:, 0])
    history: list[dict] = []
    initial = None
    best, stale = math.inf, 0
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        for group in opt.param_groups:
            group["lr"] = config.lr_at(epoch)
        # per-epoch streams make a resumed run replay exactly the batches, masks and dropout draws
        rng = np.random.default_rng([seed, epoch])
        torch.manual_seed(int(rng.integers(2**62)))
        sums = np.zeros(4)
        n = 0
        for idx in _epoch_order(len(dataset), config, rng):
            masked, x = dataset.batch(idx, config.mask, rng)
            masked, x = torch.from_numpy(masked), torch.from_numpy(x)
            loss = compute_loss(model, masked, x, dataset.dt, config.loss_weights, config.freeze_eigvals)
            opt.zero_grad()
            loss.total.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            b = len(idx)
            sums += b * np.array([loss.recon.item(), loss.pred.item(), loss.lin.item(), loss.total.item()])
            n += b
        rec = dict(zip(("recon", "pred", "lin", "total"), (sums / n).tolist()))
        w = config.loss_weights
        rec["total"] = w[0] * rec["recon"] + w[1] * rec["pred"] + w[2] * rec["lin"]
        rec = {"seed": seed, "epoch": epoch + 1, **rec, **_eig_snapshot(model, probe), "seconds": time.perf_counter() - t0}
        history.append(rec)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        log.debug("seed %d epoch %d total %.5f", seed, epoch + 1, rec["total"])
        if initial is None:
            initial = rec["total"]
        elif rec["total"] > config.divergence_factor * initial:
            raise Diverged(f"seed {seed}: loss {rec['total']:.3g} exceeded {config.divergence_factor:g}x initial")
        if rec["total"] < best * (1 - config.min_delta):
            best, stale = rec["total"], 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.eval()
    return model, history, opt.state_dict()


def _epoch_order(n: int, config: TrainingConfig, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    if config.snippets_per_epoch:
        order = order[: config.snippets_per_epoch]
    return [order[i : i + config.batch_size] for i in range(0, len(order), config.batch_size)]


def train(dataset: SnippetDataset, model_cfg: EncoderConfig, config: TrainingConfig,
          log_path: Path | None = None) -> TrainResult:
    """Best-of-``restarts`` training keyed on the final epoch's total loss."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    runs = []
    for r in range(config.restarts):
        seed = config.seed + r
        try:
            model, history, opt_state = train_once(dataset, model_cfg, config, seed, log_path=log_path)
        except (Diverged, NonFiniteLoss) as err:
            log.warning("restart %d aborted: %s", r, err)
            runs.append((math.inf, None, [], None))
            continue
        runs.append((history[-1]["total"], model, history, opt_state))
    finals = [r[0] for r in runs]
    if all(r[1] is None for r in runs):
        raise Diverged("all restarts diverged")
    best = int(np.argmin(finals))
    _, model, history, opt_state = runs[best]
    return TrainResult(model, history, [r[2] for r in runs], best, finals, opt_state, [r[1] for r in runs])


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: CKN, path: str | Path, optimizer_state: dict | None = None,
                    train_config: TrainingConfig | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.cfg.to_dict(),
        "n_pairs": model.cfg.n_pairs,
        "state_dict": model.state_dict(),
        "optimizer_state": optimizer_state,
        "train_config": train_config.to_dict() if train_config else None,
        "train_config_hash": train_config.digest() if train_config else None,
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


class CheckpointError(ValueError):
    pass


def read_checkpoint(path: str | Path) -> dict:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except Exception as err:  # torch raises several unrelated types for corrupt files
        raise CheckpointError(f"could not read checkpoint {path}: {err}") from err
    if not isinstance(payload, dict) or "format" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint")
    if payload["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"checkpoint format {payload['format']!r} is not supported (expected {CHECKPOINT_FORMAT})")
    return payload


def load_checkpoint(path: str | Path, expect_pairs: int | None = None) -> CKN:
    payload = read_checkpoint(path)
    cfg = EncoderConfig(**payload["model_config"])
    if expect_pairs is not None and cfg.n_pairs != expect_pairs:
        raise CheckpointError(f"checkpoint has M={cfg.n_pairs} eigenvalue pairs, expected M={expect_pairs}")
    model = CKN(cfg)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as err:
        raise CheckpointError(f"weight shapes do not match the stored configuration: {err}") from err
    model.eval()
    return model


def load_into(model: CKN, path: str | Path) -> CKN:
    """Load weights into an existing model, with a shape diagnostic on mismatch."""
    payload = read_checkpoint(path)
    stored = payload["n_pairs"]
    if stored != model.cfg.n_pairs:
        raise CheckpointError(f"checkpoint has M={stored} eigenvalue pairs but the model has M={model.cfg.n_pairs}")
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as err:
        raise CheckpointError(f"shape mismatch loading {path}: {err}") from err
    return model
