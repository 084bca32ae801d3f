"""Synthetic video generators for systems with known modal content.

Four systems are provided: superimposed decaying circular waves (pixels hold the
wave amplitude directly), particles falling at constant velocity with periodic
wrap, a vibrating string observed as a rendered line, and a nonlinear pendulum.
Every generator is a pure function of ``(spec, n_frames, height, width, dt)``
and returns a :class:`VideoClip` of float64 frames shaped ``(n, h, w, 1)``.

All generators accept a start time ``t0`` (seconds) so that
``gen(..., n + k)[k:] == gen(..., n, t0=k * dt)``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

DEFAULT_DT = 0.01
DEFAULT_SIZE = 64
PENDULUM_SIZE = (208, 256)

MAGIC = b"CKNV1"
_HEADER = struct.Struct("<4Id8s")


@dataclass
class VideoClip:
    """A grayscale frame sequence ``frames[t, row, col, channel]`` sampled every ``dt`` seconds."""

    frames: np.ndarray
    dt: float = DEFAULT_DT
    meta: dict[str, Any] | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim == 3:
            self.frames = self.frames[..., None]
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (n, h, w, c), got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("clip has no frames")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("clip contains non-finite pixel values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[1:])

    @property
    def ground_truth(self) -> list[float]:
        return list((self.meta or {}).get("frequencies_hz", []))


# --------------------------------------------------------------------------- specs


@dataclass
class WaveSource:
    center: tuple[float, float]
    frequency: float
    wavelength: float
    decay_rate: float = 0.0
    amplitude: float = 1.0


@dataclass
class WaveSystemSpec:
    sources: list[WaveSource] = field(default_factory=list)

    def validate(self):
        for s in self.sources:
            if not s.frequency > 0:
                raise ValueError(f"wave frequency must be positive, got {s.frequency}")
            if not s.wavelength > 0:
                raise ValueError(f"wavelength must be positive, got {s.wavelength}")
            if s.decay_rate < 0:
                raise ValueError(f"decay rate must be non-negative, got {s.decay_rate}")

    def frequencies(self) -> list[float]:
        return [s.frequency for s in self.sources]


@dataclass
class Particle:
    column: float
    phase: float
    velocity: float
    radius: float = 3.0
    intensity: float = 1.0


@dataclass
class ParticleSystemSpec:
    particles: list[Particle] = field(default_factory=list)

    def validate(self):
        for p in self.particles:
            if not p.velocity > 0:
                raise ValueError(f"particle velocity must be positive, got {p.velocity}")
            if p.radius < 1:
                raise ValueError(f"particle radius must be >= 1, got {p.radius}")
            if not 0 <= p.phase < 1:
                raise ValueError(f"particle phase must lie in [0, 1), got {p.phase}")

    def frequencies(self, height: int, dt: float) -> list[float]:
        return [p.velocity / (height * dt) for p in self.particles]


@dataclass
class StringComponent:
    frequency: float
    spatial_wavenumber: float
    amplitude: float
    phase: float = 0.0


@dataclass
class StringSystemSpec:
    components: list[StringComponent] = field(default_factory=list)
    line_thickness: float = 2.0

    def validate(self, height: int | None = None):
        if not self.line_thickness > 0:
            raise ValueError("line_thickness must be positive")
        if height is not None:
            total = sum(abs(c.amplitude) for c in self.components)
            if total >= height / 2:
                raise ValueError(
                    f"summed string amplitude {total} must stay below half the frame height ({height / 2})"
                )

    def frequencies(self) -> list[float]:
        return [c.frequency for c in self.components]


@dataclass
class PendulumSpec:
    natural_frequency_sq: float = (2 * math.pi) ** 2
    initial_angle: float = 1.0
    initial_velocity: float = 0.0
    rod_length: float = 110.0
    bob_radius: float = 8.0
    rod_width: float = 2.0
    substeps: int | None = None

    def validate(self):
        if not self.natural_frequency_sq > 0:
            raise ValueError("natural_frequency_sq (g/L) must be positive")
        if not abs(self.initial_angle) < math.pi:
            raise ValueError(f"|initial_angle| must be < pi, got {self.initial_angle}")

    @property
    def linear_period(self) -> float:
        return 2 * math.pi / math.sqrt(self.natural_frequency_sq)

    def frequencies(self) -> list[float]:
        return [1.0 / self.linear_period]


def _check_dims(n_frames: int, height: int, width: int, dt: float):
    if n_frames < 2:
        raise ValueError(f"n_frames must be >= 2, got {n_frames}")
    if height <= 0 or width <= 0:
        raise ValueError(f"frame dimensions must be positive, got {height}x{width}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")


def _meta(system: str, spec, freqs: list[float], **extra) -> dict[str, Any]:
    return {"system": system, "spec": asdict(spec), "frequencies_hz": list(freqs), **extra}


# ------------------------------------------------------------------ generators


def wave_value(source: WaveSource, row: float, col: float, t: float) -> float:
    """Scalar closed form of one source at pixel ``(row, col)`` and time ``t`` seconds."""
    d = math.hypot(row - source.center[0], col - source.center[1])
    return (
        source.amplitude
        * math.exp(-source.decay_rate * d)
        * math.sin(2 * math.pi * (d / source.wavelength - source.frequency * t))
    )


def gen_waves(
    spec: WaveSystemSpec,
    n_frames: int,
    height: int = DEFAULT_SIZE,
    width: int = DEFAULT_SIZE,
    dt: float = DEFAULT_DT,
    t0: float = 0.0,
) -> VideoClip:
    """Superpose outward-travelling decaying circular waves.

    ``frame[t, r, c] = sum A exp(-beta d) sin(2 pi (d / wavelength - f t))`` with ``d`` the
    distance from pixel ``(r, c)`` to the source centre.
    """
    _check_dims(n_frames, height, width, dt)
    spec.validate()
    for s in spec.sources:
        r, c = s.center
        if not (0 <= r < height and 0 <= c < width):
            raise ValueError(f"source centre {s.center} lies outside the {height}x{width} frame")
    rows, cols = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
    t = t0 + np.arange(n_frames) * dt
    frames = np.zeros((n_frames, height, width))
    for s in spec.sources:
        d = np.hypot(rows - s.center[0], cols - s.center[1])
        envelope = s.amplitude * np.exp(-s.decay_rate * d)
        frames += envelope * np.sin(2 * np.pi * (d / s.wavelength - s.frequency * t[:, None, None]))
    return VideoClip(frames[..., None], dt, _meta("waves", spec, spec.frequencies()))


def particle_rows(p: Particle, height: int, t: np.ndarray, dt: float) -> np.ndarray:
    """Row of the particle centre at times ``t`` (seconds); wraps modulo ``height``."""
    return np.mod(p.phase * height + (t / dt) * p.velocity, height)


def gen_particles(
    spec: ParticleSystemSpec,
    n_frames: int,
    height: int = DEFAULT_SIZE,
    width: int = DEFAULT_SIZE,
    dt: float = DEFAULT_DT,
    t0: float = 0.0,
) -> VideoClip:
    """Gaussian bumps (sigma = radius / 2) moving top to bottom with seamless wrap-around."""
    _check_dims(n_frames, height, width, dt)
    spec.validate()
    t = t0 + np.arange(n_frames) * dt
    rows = np.arange(height, dtype=float)
    cols = np.arange(width, dtype=float)
    frames = np.zeros((n_frames, height, width))
    for p in spec.particles:
        sigma = p.radius / 2
        centre = particle_rows(p, height, t, dt)
        dr = np.abs(rows[None, :] - centre[:, None])
        dr = np.minimum(dr, height - dr)  # periodic distance
        prof_r = np.exp(-0.5 * (dr / sigma) ** 2)
        prof_c = np.exp(-0.5 * ((cols - p.column) / sigma) ** 2)
        frames += p.intensity * prof_r[:, :, None] * prof_c[None, None, :]
    freqs = spec.frequencies(height, dt)
    return VideoClip(frames[..., None], dt, _meta("particles", spec, freqs))


def string_displacement(spec: StringSystemSpec, cols: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Displacement ``y[t, col]`` in pixels (positive is up)."""
    y = np.zeros((len(t), len(cols)))
    for c in spec.components:
        y += (
            c.amplitude
            * np.sin(c.spatial_wavenumber * cols + c.phase)[None, :]
            * np.cos(2 * np.pi * c.frequency * t)[:, None]
        )
    return y


def gen_string(
    spec: StringSystemSpec,
    n_frames: int,
    height: int = DEFAULT_SIZE,
    width: int = DEFAULT_SIZE,
    dt: float = DEFAULT_DT,
    t0: float = 0.0,
) -> VideoClip:
    """Render a vibrating string as an anti-aliased line.

    Pixel intensity is ``clip(thickness - |row - (h/2 - y)|, 0, 1)``, so pixels strictly
    within ``thickness`` rows of the string are lit.
    """
    _check_dims(n_frames, height, width, dt)
    spec.validate(height)
    t = t0 + np.arange(n_frames) * dt
    cols = np.arange(width, dtype=float)
    rows = np.arange(height, dtype=float)
    centre = height / 2 - string_displacement(spec, cols, t)  # (n, w)
    dist = np.abs(rows[None, :, None] - centre[:, None, :])
    frames = np.clip(spec.line_thickness - dist, 0.0, 1.0)
    return VideoClip(frames[..., None], dt, _meta("string", spec, spec.frequencies()))


def _pendulum_rhs(state: np.ndarray, w2: float) -> np.ndarray:
    return np.array([state[1], -w2 * math.sin(state[0])])


def integrate_pendulum(spec: PendulumSpec, n_frames: int, dt: float) -> np.ndarray:
    """Angle and angular velocity at every frame, shape ``(n_frames, 2)``.

    Classic RK4 with ``substeps`` steps per frame; by default enough sub-steps to keep
    ``sqrt(g/L) * h <= 0.005``.
    """
    spec.validate()
    w2 = spec.natural_frequency_sq
    if dt >= spec.linear_period / 2:
        raise ValueError(f"dt={dt} must be below half the linearised period ({spec.linear_period / 2:.4g} s)")
    n_sub = spec.substeps or max(1, math.ceil(dt * math.sqrt(w2) / 0.005))
    h = dt / n_sub
    out = np.empty((n_frames, 2))
    s = np.array([spec.initial_angle, spec.initial_velocity], dtype=float)
    out[0] = s
    for i in range(1, n_frames):
        for _ in range(n_sub):
            k1 = _pendulum_rhs(s, w2)
            k2 = _pendulum_rhs(s + 0.5 * h * k1, w2)
            k3 = _pendulum_rhs(s + 0.5 * h * k2, w2)
            k4 = _pendulum_rhs(s + h * k3, w2)
            s = s + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = s
    return out


def pendulum_energy(states: np.ndarray, natural_frequency_sq: float) -> np.ndarray:
    theta, omega = states[:, 0], states[:, 1]
    return 0.5 * omega**2 + natural_frequency_sq * (1 - np.cos(theta))


def gen_pendulum(
    spec: PendulumSpec,
    n_frames: int,
    height: int = PENDULUM_SIZE[0],
    width: int = PENDULUM_SIZE[1],
    dt: float = DEFAULT_DT,
    t0: float = 0.0,
) -> VideoClip:
    """Rod and bob swinging from a pivot at the top centre (row ``h/4``)."""
    _check_dims(n_frames, height, width, dt)
    if t0:
        # advance the initial state rather than re-deriving a phase
        k = int(round(t0 / dt))
        start = integrate_pendulum(spec, k + 1, dt)[-1]
        spec = PendulumSpec(**{**asdict(spec), "initial_angle": float(start[0]), "initial_velocity": float(start[1])})
    states = integrate_pendulum(spec, n_frames, dt)
    pivot = np.array([height / 4, width / 2])
    rr, cc = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
    frames = np.empty((n_frames, height, width))
    for i, theta in enumerate(states[:, 0]):
        direction = np.array([math.cos(theta), math.sin(theta)])  # down is +row
        bob = pivot + spec.rod_length * direction
        # distance from each pixel to the rod segment
        pr, pc = rr - pivot[0], cc - pivot[1]
        along = np.clip(pr * direction[0] + pc * direction[1], 0.0, spec.rod_length)
        d_rod = np.hypot(pr - along * direction[0], pc - along * direction[1])
        d_bob = np.hypot(rr - bob[0], cc - bob[1])
        rod = np.clip(spec.rod_width / 2 + 0.5 - d_rod, 0.0, 1.0)
        disc = np.clip(spec.bob_radius + 0.5 - d_bob, 0.0, 1.0)
        frames[i] = np.maximum(rod, disc)
    meta = _meta("pendulum", spec, spec.frequencies(), theta=states[:, 0].tolist())
    return VideoClip(frames[..., None], dt, meta)


# ------------------------------------------------------------------- profiles


def default_wave_spec(n_sources: int = 3) -> WaveSystemSpec:
    sources = [
        WaveSource(center=(18.0, 20.0), frequency=2.00, wavelength=24.0, decay_rate=0.04),
        WaveSource(center=(44.0, 46.0), frequency=5.71, wavelength=14.0, decay_rate=0.05),
        WaveSource(center=(46.0, 14.0), frequency=5.00, wavelength=18.0, decay_rate=0.05),
    ]
    return WaveSystemSpec(sources[:n_sources])


def default_particle_spec(
    frequencies=(5.89, 7.84, 3.92), height: int = DEFAULT_SIZE, dt: float = DEFAULT_DT
) -> ParticleSystemSpec:
    columns = (12.0, 32.0, 52.0)
    phases = (0.0, 0.35, 0.7)
    return ParticleSystemSpec(
        [Particle(column=c, phase=p, velocity=f * height * dt, radius=4.0) for f, c, p in zip(frequencies, columns, phases)]
    )


def default_string_spec(width: int = DEFAULT_SIZE) -> StringSystemSpec:
    return StringSystemSpec(
        components=[
            StringComponent(frequency=1.78, spatial_wavenumber=math.pi / width, amplitude=12.0),
            StringComponent(frequency=2.67, spatial_wavenumber=2 * math.pi / width, amplitude=8.0),
        ],
        line_thickness=2.0,
    )


def default_pendulum_spec(initial_angle: float = 1.0, height: int = PENDULUM_SIZE[0]) -> PendulumSpec:
    """Geometry drawn for a 208-row frame, scaled proportionally to ``height``."""
    s = height / PENDULUM_SIZE[0]
    return PendulumSpec(
        initial_angle=initial_angle, rod_length=110.0 * s, bob_radius=8.0 * s, rod_width=max(1.0, 2.0 * s)
    )


SYSTEMS = ("waves", "particles", "string", "pendulum")


def generate(system: str, n_frames: int, height: int | None = None, width: int | None = None,
             dt: float = DEFAULT_DT, spec=None, t0: float = 0.0) -> VideoClip:
    """Render one of the named systems with its default profile unless ``spec`` is given."""
    if system == "pendulum":
        height, width = height or PENDULUM_SIZE[0], width or PENDULUM_SIZE[1]
        return gen_pendulum(spec or default_pendulum_spec(height=height), n_frames, height, width, dt, t0)
    height, width = height or DEFAULT_SIZE, width or DEFAULT_SIZE
    if system == "waves":
        return gen_waves(spec or default_wave_spec(), n_frames, height, width, dt, t0)
    if system == "particles":
        return gen_particles(spec or default_particle_spec(height=height, dt=dt), n_frames, height, width, dt, t0)
    if system == "string":
        return gen_string(spec or default_string_spec(width), n_frames, height, width, dt, t0)
    raise ValueError(f"unknown system {system!r}; choose from {SYSTEMS}")


SPEC_TYPES = {
    "waves": (WaveSystemSpec, "sources", WaveSource),
    "particles": (ParticleSystemSpec, "particles", Particle),
    "string": (StringSystemSpec, "components", StringComponent),
}


def spec_from_dict(system: str, d: dict) -> Any:
    if system == "pendulum":
        return PendulumSpec(**d)
    cls, key, item = SPEC_TYPES[system]
    items = []
    for it in d.get(key, []):
        it = dict(it)
        if "center" in it:
            it["center"] = tuple(it["center"])
        items.append(item(**it))
    rest = {k: v for k, v in d.items() if k != key}
    return cls(**{key: items, **rest})


# ------------------------------------------------------------------ container


def save_clip(clip: VideoClip, path: str | Path) -> Path:
    """Write ``path`` (binary container) and ``path.json`` (spec + ground truth sidecar)."""
    path = Path(path)
    frames = np.ascontiguousarray(clip.frames)
    n, h, w, c = frames.shape
    dtype = frames.dtype.str.encode().ljust(8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(n, h, w, c, float(clip.dt), dtype))
        fh.write(frames.tobytes(order="C"))
    sidecar = {"dt": clip.dt, "shape": [n, h, w, c], **(clip.meta or {})}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))
    return path


def load_clip(path: str | Path) -> VideoClip:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a clip container (bad magic {magic!r})")
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        n, h, w, c, dt, dtype = _HEADER.unpack(raw)
        dtype = np.dtype(dtype.decode().strip())
        data = fh.read()
    expected = n * h * w * c * dtype.itemsize
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes of frame data, found {len(data)}")
    frames = np.frombuffer(data, dtype=dtype).reshape(n, h, w, c).copy()
    sidecar = Path(str(path) + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else None
    if meta:
        meta = {k: v for k, v in meta.items() if k not in ("dt", "shape")}
    return VideoClip(frames, dt, meta)
