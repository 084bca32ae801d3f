"""Post-training modal analysis and the exact-DMD baseline."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import koopman
from .dataio import stack_frames
from .net import CKN
from .synth import VideoClip

F_MIN = 0.2
SPREAD_MAX = 0.10
FREQ_TOL = 0.3


@dataclass
class ModeReport:
    mode_index: int
    frequency: float
    frequency_spread: float
    growth: float
    energy: float
    distinct: bool = False


@torch.no_grad()
def embed_clip(model: CKN, clip: VideoClip, stack: int = 1, batch: int = 256) -> tuple[torch.Tensor, torch.Tensor]:
    """Embeddings ``(N, 2M)`` and eigenvalues ``(N, M, 2)`` for every frame stack of ``clip``."""
    model.eval()
    x = torch.from_numpy(stack_frames(clip.frames, stack).astype(np.float32))
    x = x.to(next(model.parameters()).dtype)
    ys = torch.cat([model.encode(x[i : i + batch]) for i in range(0, len(x), batch)])
    return ys, model.eigvals(ys)


@torch.no_grad()
def mode_energies(model: CKN, ys: torch.Tensor) -> np.ndarray:
    """Mean over frames of the spatial variance of each single-mode decoded reconstruction."""
    M = model.cfg.n_pairs
    out = np.zeros(M)
    for i in range(M):
        rec = model.decode(koopman.null_modes(ys, {i}))
        out[i] = float(rec.flatten(1).var(dim=1, unbiased=False).mean())
    return out


def extract_mode_table(model: CKN, clip: VideoClip, stack: int = 1, energy_frames: int = 256) -> list[ModeReport]:
    """Per-mode frequency statistics over ``clip`` (already prepared with the training mean)."""
    ys, eig = embed_clip(model, clip, stack)
    freq = (eig[..., 1].abs() / (2 * np.pi)).double().numpy()
    mu = eig[..., 0].double().numpy()
    sub = np.linspace(0, len(ys) - 1, min(energy_frames, len(ys))).astype(int)
    energy = mode_energies(model, ys[sub])
    q25, med, q75 = np.percentile(freq, [25, 50, 75], axis=0)
    return [
        ModeReport(i, float(med[i]), float(q75[i] - q25[i]), float(np.median(mu[:, i])), float(energy[i]))
        for i in range(model.cfg.n_pairs)
    ]


def is_periodic(r: ModeReport, f_min: float = F_MIN, spread_max: float = SPREAD_MAX) -> bool:
    return r.frequency >= f_min and r.frequency_spread <= spread_max * r.frequency


def cluster_by_frequency(reports: list[ModeReport], freq_tol: float) -> list[list[ModeReport]]:
    """Group modes around energetic representatives.

    Modes are visited by decreasing energy; each joins the first cluster whose representative
    (its most energetic member) lies within ``freq_tol``, otherwise it starts a new cluster.
    Unlike single linkage, a ladder of redundant modes cannot bridge two distinct frequencies.
    """
    clusters: list[list[ModeReport]] = []
    for r in sorted(reports, key=lambda r: (-r.energy, r.frequency, r.mode_index)):
        for c in clusters:
            if abs(r.frequency - c[0].frequency) <= freq_tol:
                c.append(r)
                break
        else:
            clusters.append([r])
    return clusters


def select_modes(
    reports: list[ModeReport],
    k: int,
    freq_tol: float = FREQ_TOL,
    f_min: float = F_MIN,
    spread_max: float = SPREAD_MAX,
) -> list[int]:
    """Indices of up to ``k`` distinct modes, highest energy first.

    Aperiodic or unstable-frequency modes are dropped, the rest are grouped by frequency and
    each group is represented by its most energetic member. Warns when fewer than ``k`` remain.
    """
    if k > len(reports):
        raise ValueError(f"cannot select {k} modes from {len(reports)}")
    periodic = [r for r in reports if is_periodic(r, f_min, spread_max)]
    chosen = [c[0].mode_index for c in cluster_by_frequency(periodic, freq_tol)][:k]
    if len(chosen) < k:
        warnings.warn(f"only {len(chosen)} distinct modes found (asked for {k})", stacklevel=2)
    return chosen


def mark_distinct(reports: list[ModeReport], selected: list[int]) -> list[ModeReport]:
    return [ModeReport(**{**asdict(r), "distinct": r.mode_index in selected}) for r in reports]


def match_frequencies(found: list[float], truth: list[float]) -> list[float]:
    """Reorder ``found`` to best match ``truth`` (minimum total absolute error over permutations).

    Missing entries come back as ``nan``.
    """
    from itertools import permutations

    padded = list(found) + [np.nan] * max(0, len(truth) - len(found))
    best, best_err = None, np.inf
    for perm in permutations(range(len(padded)), len(truth)):
        cand = [padded[i] for i in perm]
        err = sum(abs(c - t) if np.isfinite(c) else 1e6 for c, t in zip(cand, truth))
        if err < best_err:
            best, best_err = cand, err
    return best


@torch.no_grad()
def partial_reconstruction(
    model: CKN,
    clip: VideoClip,
    keep,
    start: int = 0,
    m: int = 30,
    stack: int = 1,
    dt: float | None = None,
    freeze: bool = False,
) -> VideoClip:
    """Encode the stack at ``start``, roll ``m`` steps forward and decode only the ``keep`` pairs.

    ``keep`` is a mode index or a collection of indices; frame ``k`` of the result is the
    decoded state ``k`` steps after ``start``.
    """
    model.eval()
    keep = {keep} if isinstance(keep, (int, np.integer)) else set(keep)
    dt = dt or clip.dt
    x0 = torch.from_numpy(stack_frames(clip.frames[start : start + stack], stack).astype(np.float32))
    x0 = x0.to(next(model.parameters()).dtype)
    y1 = model.encode(x0)
    ys = torch.cat([y1] + model.rollout(y1, m, dt, freeze=freeze))
    frames = model.decode(koopman.null_modes(ys, keep)).double().numpy()
    return VideoClip(frames, dt, {"keep": sorted(keep), "start": start})


def modal_videos(model: CKN, clip: VideoClip, modes, start: int = 0, m: int = 30, stack: int = 1):
    """Zero-mean single-mode videos for ``modes`` plus the full reconstruction."""
    out = {}
    for i in modes:
        v = partial_reconstruction(model, clip, i, start, m, stack)
        out[i] = VideoClip(v.frames - v.frames.mean(axis=0), v.dt, v.meta)
    out["full"] = partial_reconstruction(model, clip, range(model.cfg.n_pairs), start, m, stack)
    return out


# ---------------------------------------------------------------------- DMD


@dataclass
class DmdResult:
    eigenvalues: np.ndarray  # discrete-time, complex (rank,)
    modes: np.ndarray  # (n_pixels, rank)
    amplitudes: np.ndarray
    rank: int
    dt: float
    frame_shape: tuple[int, ...]

    @property
    def frequencies(self) -> np.ndarray:
        return np.angle(self.eigenvalues) / (2 * np.pi * self.dt)

    @property
    def growth_rates(self) -> np.ndarray:
        return np.log(np.abs(self.eigenvalues)) / self.dt

    def reconstruct(self, n_frames: int) -> np.ndarray:
        k = np.arange(n_frames)
        dyn = self.eigenvalues[:, None] ** k[None, :] * self.amplitudes[:, None]
        x = (self.modes @ dyn).real.T
        return x.reshape(n_frames, *self.frame_shape)

    def mode_energy(self) -> np.ndarray:
        return np.abs(self.amplitudes) * np.linalg.norm(self.modes, axis=0)


def dmd(clip: VideoClip, rank: int) -> DmdResult:
    """Exact DMD of the flattened frames, no mean subtraction."""
    X = clip.frames.reshape(clip.n_frames, -1).T.astype(float)
    X1, X2 = X[:, :-1], X[:, 1:]
    if rank < 1 or rank > min(X1.shape):
        raise ValueError(f"rank must lie in [1, {min(X1.shape)}], got {rank}")
    U, s, Vh = np.linalg.svd(X1, full_matrices=False)
    U, s, V = U[:, :rank], s[:rank], Vh[:rank].conj().T
    if s[-1] <= s[0] * 1e-14:
        warnings.warn("snapshot matrix is numerically rank deficient at the requested rank", stacklevel=2)
    Atilde = U.conj().T @ X2 @ V / s
    lam, W = np.linalg.eig(Atilde)
    Phi = X2 @ V / s @ W
    b = np.linalg.lstsq(Phi, X[:, 0].astype(complex), rcond=None)[0]
    return DmdResult(lam, Phi, b, rank, clip.dt, tuple(clip.frames.shape[1:]))


def dmd_oscillatory(result: DmdResult, f_min: float = F_MIN, merge_tol: float = 1e-6) -> list[tuple[float, float]]:
    """``(frequency, energy)`` of distinct oscillatory DMD modes, conjugates merged, by energy."""
    freqs = np.abs(result.frequencies)
    energy = result.mode_energy()
    groups: list[list[float]] = []
    for f, e in sorted(zip(freqs, energy)):
        if f < f_min:
            continue
        if groups and abs(f - groups[-1][0]) <= merge_tol:
            groups[-1][1] += e
        else:
            groups.append([f, e])
    return sorted(((f, e) for f, e in groups), key=lambda fe: -fe[1])


def dmd_reconstruction_error(clip: VideoClip, rank: int) -> float:
    """Relative Frobenius error of the rank-``rank`` DMD reconstruction of ``clip``."""
    res = dmd(clip, rank)
    rec = res.reconstruct(clip.n_frames)
    return float(np.linalg.norm(rec - clip.frames) / np.linalg.norm(clip.frames))


# ------------------------------------------------------------------- export


def format_table(reports: list[ModeReport], truth: list[float] | None = None) -> str:
    lines = [f"{'mode':>4} {'freq_hz':>8} {'spread':>7} {'growth':>8} {'energy':>10} distinct"]
    for r in reports:
        lines.append(
            f"{r.mode_index:>4} {r.frequency:8.3f} {r.frequency_spread:7.3f} {r.growth:8.3f} {r.energy:10.4g} "
            f"{'yes' if r.distinct else ''}"
        )
    if truth:
        lines.append("ground truth (Hz): " + ", ".join(f"{f:.2f}" for f in truth))
    return "\n".join(lines)


def write_table(reports: list[ModeReport], out_dir: str | Path, truth: list[float] | None = None) -> None:
    out_dir = Path(out_dir)
    (out_dir / "modes.txt").write_text(format_table(reports, truth) + "\n")
    (out_dir / "modes.json").write_text(
        json.dumps({"modes": [asdict(r) for r in reports], "ground_truth_hz": truth or []}, indent=2)
    )


def eigen_trace(eig: torch.Tensor) -> str:
    """Columnar text ``frame mode mu omega`` for every frame and pair."""
    rows = ["frame mode mu omega"]
    arr = eig.detach().double().numpy()
    for t in range(arr.shape[0]):
        for i in range(arr.shape[1]):
            rows.append(f"{t} {i} {arr[t, i, 0]:.6g} {arr[t, i, 1]:.6g}")
    return "\n".join(rows) + "\n"
