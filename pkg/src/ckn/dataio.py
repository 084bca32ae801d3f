"""Dataset preparation: scaling, mean subtraction, channel stacking and masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synth import VideoClip


@dataclass
class MaskParams:
    """Random-square occlusion applied to the encoder input.

    Square sides are fractions of ``min(height, width)``.
    """

    min_squares: int = 2
    max_squares: int = 3
    min_side_frac: float = 0.1
    max_side_frac: float = 0.3
    fill_value: float = 0.0

    def __post_init__(self):
        if not 0 <= self.min_squares <= self.max_squares:
            raise ValueError("need 0 <= min_squares <= max_squares")
        if not 0 < self.min_side_frac <= self.max_side_frac <= 1:
            raise ValueError("need 0 < min_side_frac <= max_side_frac <= 1")

    @classmethod
    def disabled(cls) -> "MaskParams":
        return cls(min_squares=0, max_squares=0)


@dataclass
class Snippet:
    """``inputs[j]`` is the frame stack starting at ``start + j``; only ``masked_input_0`` is occluded."""

    inputs: np.ndarray  # (T+1, h, w, stack)
    masked_input_0: np.ndarray  # (h, w, stack)
    clip_id: int
    start: int


def normalize(clip: VideoClip) -> VideoClip:
    """Affinely map pixel values to [-1, 1] (a constant clip maps to zeros)."""
    lo, hi = float(clip.frames.min()), float(clip.frames.max())
    if hi > lo:
        frames = 2 * (clip.frames - lo) / (hi - lo) - 1
    else:
        frames = np.zeros_like(clip.frames)
    return VideoClip(frames, clip.dt, clip.meta)


def subtract_mean(clip: VideoClip) -> tuple[VideoClip, np.ndarray]:
    mean_frame = clip.frames.mean(axis=0)
    return VideoClip(clip.frames - mean_frame, clip.dt, clip.meta), mean_frame


def add_mean(clip: VideoClip, mean_frame: np.ndarray) -> VideoClip:
    return VideoClip(clip.frames + mean_frame, clip.dt, clip.meta)


@dataclass
class Preprocessor:
    """Scaling to [-1, 1] followed by removal of the temporal mean frame, fitted on training clips."""

    lo: float
    hi: float
    mean_frame: np.ndarray

    @classmethod
    def fit(cls, clips: list[VideoClip]) -> "Preprocessor":
        lo = min(float(c.frames.min()) for c in clips)
        hi = max(float(c.frames.max()) for c in clips)
        scaled = [cls._scale(c.frames, lo, hi) for c in clips]
        total = sum(s.sum(axis=0) for s in scaled)
        return cls(lo, hi, total / sum(len(s) for s in scaled))

    @staticmethod
    def _scale(frames: np.ndarray, lo: float, hi: float) -> np.ndarray:
        return 2 * (frames - lo) / (hi - lo) - 1 if hi > lo else np.zeros_like(frames)

    def apply(self, clip: VideoClip) -> VideoClip:
        return VideoClip(self._scale(clip.frames, self.lo, self.hi) - self.mean_frame, clip.dt, clip.meta)

    def invert(self, frames: np.ndarray) -> np.ndarray:
        """Back to raw pixel units; ``frames`` may carry stacked channels."""
        reps = frames.shape[-1] // self.mean_frame.shape[-1]
        x = frames + np.tile(self.mean_frame, reps)
        return (x + 1) * (self.hi - self.lo) / 2 + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "mean_frame": self.mean_frame.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(float(d["lo"]), float(d["hi"]), np.asarray(d["mean_frame"], dtype=float))


def prepare(clip: VideoClip) -> tuple[VideoClip, np.ndarray]:
    """Normalize to [-1, 1] then subtract the temporal mean frame."""
    return subtract_mean(normalize(clip))


def stack_frames(frames: np.ndarray, stack: int) -> np.ndarray:
    """Concatenate ``stack`` consecutive frames along channels: (n, h, w, c) -> (n-stack+1, h, w, c*stack)."""
    if stack < 1:
        raise ValueError("stack must be >= 1")
    n = frames.shape[0] - stack + 1
    if n < 1:
        raise ValueError(f"need at least {stack} frames to stack, got {frames.shape[0]}")
    return np.concatenate([frames[j : j + n] for j in range(stack)], axis=-1)


def draw_squares(height: int, width: int, params: MaskParams, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """Sample ``(row, col, side)`` for each occluding square, fully inside the frame."""
    k = int(rng.integers(params.min_squares, params.max_squares + 1))
    base = min(height, width)
    squares = []
    for _ in range(k):
        side = int(round(rng.uniform(params.min_side_frac, params.max_side_frac) * base))
        side = min(max(side, 1), base)
        r = int(rng.integers(0, height - side + 1))
        c = int(rng.integers(0, width - side + 1))
        squares.append((r, c, side))
    return squares


def apply_masks(frame_stack: np.ndarray, params: MaskParams, rng: np.random.Generator | int | None) -> np.ndarray:
    """Return a copy of ``frame_stack`` (h, w, c) with random squares set to ``fill_value`` on all channels."""
    rng = np.random.default_rng(rng)
    h, w = frame_stack.shape[:2]
    out = np.array(frame_stack, copy=True)
    for r, c, side in draw_squares(h, w, params, rng):
        out[r : r + side, c : c + side, ...] = params.fill_value
    return out


def n_snippets(n_frames: int, T: int, stack: int, stride: int = 1) -> int:
    return (n_frames - stack - T) // stride + 1


def snippet_starts(n_frames: int, T: int, stack: int = 1, stride: int = 1) -> np.ndarray:
    if T < 1:
        raise ValueError(f"prediction horizon T must be >= 1, got {T}")
    if stack < 1:
        raise ValueError("stack must be >= 1")
    if n_frames < stack + T:
        raise ValueError(f"clip of {n_frames} frames is too short for stack={stack}, T={T}")
    return np.arange(0, n_snippets(n_frames, T, stack, stride) * stride, stride)


def make_snippets(
    clip: VideoClip,
    T: int,
    stack: int = 1,
    stride: int = 1,
    params: MaskParams | None = None,
    rng: np.random.Generator | int | None = None,
    clip_id: int = 0,
) -> list[Snippet]:
    """Cut a (prepared) clip into length-``T+1`` windows of frame stacks."""
    params = params or MaskParams.disabled()
    rng = np.random.default_rng(rng)
    starts = snippet_starts(clip.n_frames, T, stack, stride)
    stacked = stack_frames(clip.frames, stack)
    out = []
    for s in starts:
        inputs = stacked[s : s + T + 1]
        out.append(Snippet(inputs, apply_masks(inputs[0], params, rng), clip_id, int(s)))
    return out


class SnippetDataset:
    """Window index over one or more prepared clips, stacked once up front.

    Batches are drawn as arrays ``(masked x1, [x1 .. x_{T+1}])`` with fresh masks every call.
    """

    def __init__(self, clips: list[VideoClip], T: int, stack: int = 1, stride: int = 1):
        if not clips:
            raise ValueError("dataset needs at least one clip")
        self.T, self.stack = T, stack
        self.dt = clips[0].dt
        self.stacked = [stack_frames(c.frames, stack).astype(np.float32) for c in clips]
        self.index = [
            (i, int(s)) for i, c in enumerate(clips) for s in snippet_starts(c.n_frames, T, stack, stride)
        ]

    def __len__(self) -> int:
        return len(self.index)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.stacked[0].shape[1:])

    def windows(self, idx) -> np.ndarray:
        """Unmasked windows ``(B, T+1, h, w, c)``."""
        return np.stack([self.stacked[c][s : s + self.T + 1] for c, s in (self.index[i] for i in idx)])

    def batch(self, idx, params: MaskParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        x = self.windows(idx)
        if params.max_squares == 0:
            return x[:, 0].copy(), x
        masked = np.stack([apply_masks(w[0], params, rng) for w in x])
        return masked, x
