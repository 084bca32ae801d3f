"""Block-diagonal latent dynamics.

An embedding of length ``2M`` holds ``M`` planar pairs; pair ``i`` sits in slots
``2i`` and ``2i + 1``. Each pair is advanced by the scaled rotation
``exp(mu dt) R(omega dt)``, i.e. multiplication of ``y[2i] + 1j * y[2i+1]`` by
``exp((mu + 1j omega) dt)``. Eigenvalues are continuous-time: ``mu`` in 1/s and
``omega`` in rad/s, stored as ``(..., M, 2)`` tensors with ``[..., 0] = mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import torch


@dataclass(frozen=True)
class EigenPair:
    mu: float
    omega: float

    @property
    def frequency(self) -> float:
        return pair_frequency(self)


def pair_frequency(pair) -> float:
    """Frequency in Hz of an eigenvalue pair (``EigenPair`` or ``(mu, omega)``)."""
    omega = pair.omega if isinstance(pair, EigenPair) else pair[1]
    return abs(float(omega)) / (2 * math.pi)


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], EigenPair):
        x = [[p.mu, p.omega] for p in x]
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=dtype)


def block_matrices(pairs, dt: float) -> torch.Tensor:
    """The ``M`` real 2x2 blocks ``exp(mu dt) [[cos, -sin], [sin, cos]](omega dt)``, shape ``(..., M, 2, 2)``."""
    pairs = _as_tensor(pairs)
    scale = torch.exp(pairs[..., 0] * dt)
    c, s = torch.cos(pairs[..., 1] * dt), torch.sin(pairs[..., 1] * dt)
    return torch.stack([torch.stack([scale * c, -scale * s], -1), torch.stack([scale * s, scale * c], -1)], -2)


def koopman_matrix(pairs, dt: float) -> torch.Tensor:
    """Dense ``2M x 2M`` block-diagonal matrix (for inspection; ``advance`` never builds it)."""
    return torch.block_diag(*block_matrices(pairs, dt))


def advance(y, pairs, dt: float) -> torch.Tensor:
    """One step of the latent dynamics. ``y`` is ``(..., 2M)``, ``pairs`` broadcastable to ``(..., M, 2)``."""
    y = _as_tensor(y)
    pairs = _as_tensor(pairs, y)
    if dt <= 0:
        raise ValueError("dt must be positive")
    a, b = y[..., 0::2], y[..., 1::2]
    if pairs.shape[-2] != a.shape[-1]:
        raise ValueError(f"embedding has {a.shape[-1]} pairs but {pairs.shape[-2]} eigenvalue pairs were given")
    scale = torch.exp(pairs[..., 0] * dt)
    c, s = torch.cos(pairs[..., 1] * dt), torch.sin(pairs[..., 1] * dt)
    a2 = scale * (c * a - s * b)
    b2 = scale * (s * a + c * b)
    return torch.stack([a2, b2], -1).flatten(-2)


def rollout(
    eigvals: Callable[[torch.Tensor], torch.Tensor],
    y1: torch.Tensor,
    m: int,
    dt: float,
    freeze: bool = False,
) -> list[torch.Tensor]:
    """Apply ``advance`` ``m`` times, returning ``[y_2, ..., y_{m+1}]``.

    ``eigvals`` maps an embedding to its ``(..., M, 2)`` eigenvalues and is re-evaluated
    at every step unless ``freeze`` (then the eigenvalues of ``y1`` are reused).
    """
    if m < 1:
        raise ValueError("rollout needs m >= 1")
    out = []
    y = y1
    lam = eigvals(y1) if freeze else None
    for _ in range(m):
        y = advance(y, lam if freeze else eigvals(y), dt)
        out.append(y)
    return out


def null_modes(y, keep: Iterable[int]) -> torch.Tensor:
    """Zero every pair not in ``keep`` (0-based pair indices)."""
    y = _as_tensor(y)
    n_pairs = y.shape[-1] // 2
    keep = set(keep)
    bad = [k for k in keep if not 0 <= k < n_pairs]
    if bad:
        raise ValueError(f"mode indices {bad} out of range for {n_pairs} pairs")
    mask = torch.zeros(n_pairs, dtype=y.dtype, device=y.device)
    for k in keep:
        mask[k] = 1
    return y * mask.repeat_interleave(2)


def pair_radii(y) -> torch.Tensor:
    y = _as_tensor(y)
    return torch.hypot(y[..., 0::2], y[..., 1::2])


def to_pairs(eig: torch.Tensor) -> list[EigenPair]:
    eig = eig.detach().cpu().double().reshape(-1, 2)
    return [EigenPair(float(m), float(w)) for m, w in eig]
