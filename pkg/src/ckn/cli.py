"""Command-line front end: ``ckn generate | train | modes | dmd | render``.

Every command writes into its own run directory together with a ``manifest.json``
holding the resolved :class:`RunConfig` and SHA-256 hashes of inputs and outputs.
Commands only talk to each other through those files.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import torch
import yaml

from . import __version__, dataio, modal, synth, train
from .net import EncoderConfig
from .synth import VideoClip
from .train import CheckpointError, Diverged, NonFiniteLoss, TrainingConfig

log = logging.getLogger("ckn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------- config


def desk_model(**kw) -> EncoderConfig:
    """Architecture shared by every profile at 64x64 desk scale."""
    base = dict(conv_filters=(16, 16, 16), dense_widths=(64,), dropout_rate=0.0, n_pairs=8)
    return EncoderConfig(**{**base, **kw})


def desk_training(**kw) -> TrainingConfig:
    # horizon 5 rather than the library default of 3: at this training budget a 3-step
    # window cannot tell 5.00 Hz from 5.71 Hz (see the README)
    base = dict(
        T=5,
        epochs=50, learning_rate=3e-3, lr_schedule="cosine", snippets_per_epoch=512, restarts=3, patience=1000
    )
    return TrainingConfig(**{**base, **kw})


@dataclass
class RunConfig:
    """Everything needed to regenerate data, train and analyse one system."""

    system: str = "waves"
    n_frames: int = 2000
    height: int | None = None
    width: int | None = None
    dt: float = synth.DEFAULT_DT
    n_sources: int | None = None
    system_spec: dict | None = None
    # pendulum amplitude sweep, one clip per initial angle
    angles: tuple[float, ...] = ()
    stack: int = 1
    seed: int = 0
    model: EncoderConfig = field(default_factory=desk_model)
    training: TrainingConfig = field(default_factory=desk_training)
    k: int | None = None
    freq_tol: float = modal.FREQ_TOL
    f_min: float = modal.F_MIN
    spread_max: float = modal.SPREAD_MAX
    rollout_steps: int = 30
    dmd_rank: int = 6

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = EncoderConfig(**self.model)
        if isinstance(self.training, dict):
            self.training = TrainingConfig(**self.training)
        self.angles = tuple(self.angles)
        if self.system not in synth.SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {', '.join(synth.SYSTEMS)}")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if self.stack < 1:
            raise ConfigError("stack must be >= 1")
        if self.n_sources is not None and self.n_sources < 0:
            raise ConfigError("n_sources must be >= 0")

    @property
    def frame_size(self) -> tuple[int, int]:
        return _frame_size(self.system, self.height, self.width)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from err


def _frame_size(system: str, height: int | None, width: int | None) -> tuple[int, int]:
    h, w = synth.PENDULUM_SIZE if system == "pendulum" else (synth.DEFAULT_SIZE, synth.DEFAULT_SIZE)
    return height or h, width or w


PROFILES: dict[str, dict] = {
    "waves": {"system": "waves"},
    "particles": {"system": "particles"},
    "string": {"system": "string", "stack": 3},
    # prediction task at reduced resolution; see the README for the scale choice
    "pendulum": {
        "system": "pendulum",
        "stack": 3,
        "height": 64,
        "width": 80,
        "n_frames": 400,
        "angles": (0.1, 0.5, 1.0, 1.5, 2.0),
        "training": {"T": 5},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def profile(name: str, **overrides) -> RunConfig:
    """Profile defaults for ``name`` with nested ``overrides`` applied."""
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    base = RunConfig().to_dict()
    d = _merge(_merge(base, PROFILES[name]), overrides)
    d["model"]["in_channels"] = d["stack"]
    h, w = _frame_size(d["system"], d["height"], d["width"])
    d["model"]["height"], d["model"]["width"] = h, w
    return RunConfig.from_dict(d)


def load_config_file(path: str | Path) -> dict:
    """YAML or JSON mapping; a run manifest yields its stored ``run_config``."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data.get("run_config", data)


def _parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.sub=value")
    key, raw = item.split("=", 1)
    return key.split("."), yaml.safe_load(raw)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Profile defaults, then the config file, then ``--set`` overrides, then explicit flags."""
    file_cfg = load_config_file(args.config) if args.config else {}
    system = getattr(args, "system", None) or file_cfg.get("system") or "waves"
    over = _merge(file_cfg, {})
    for item in args.set or []:
        keys, value = _parse_override(item)
        node = over
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    for flag, key in (("frames", "n_frames"), ("sources", "n_sources"), ("height", "height"),
                      ("width", "width"), ("dt", "dt"), ("stack", "stack"), ("k", "k")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "angles", None):
        over["angles"] = [float(a) for a in args.angles.split(",")]
    tr = over.setdefault("training", {})
    for flag in ("epochs", "restarts", "snippets_per_epoch", "learning_rate"):
        v = getattr(args, flag, None)
        if v is not None:
            tr[flag] = v
    if getattr(args, "no_mask", False):
        tr["mask"] = asdict(dataio.MaskParams.disabled())
    if args.seed is not None:
        over["seed"] = args.seed
    over["system"] = system
    try:
        cfg = profile(system, **over)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    cfg.training.seed = cfg.seed
    return cfg


# ------------------------------------------------------------------ helpers


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_run_dir(out: str | Path, command: str, name: str | None = None) -> Path:
    root = Path(out)
    if name:
        run = root / name
    else:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        run = root / f"{stamp}-{command}"
        i = 1
        while run.exists():
            run = root / f"{stamp}-{command}-{i}"
            i += 1
    run.mkdir(parents=True, exist_ok=True)
    return run


def write_manifest(run_dir: Path, command: str, cfg: RunConfig, inputs: list[Path], argv: list[str]) -> Path:
    outputs = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name not in ("manifest.json", "run.log"))
    manifest = {
        "command": command,
        "argv": argv,
        "run_config": cfg.to_dict(),
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p.relative_to(run_dir)): sha256(p) for p in outputs},
        "versions": {
            "ckn": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
            "platform": platform.platform(),
        },
    }
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def system_spec(cfg: RunConfig, initial_angle: float | None = None):
    h, w = cfg.frame_size
    if cfg.system_spec is not None:
        spec = synth.spec_from_dict(cfg.system, cfg.system_spec)
    elif cfg.system == "waves":
        spec = synth.default_wave_spec()
    elif cfg.system == "particles":
        spec = synth.default_particle_spec(height=h, dt=cfg.dt)
    elif cfg.system == "string":
        spec = synth.default_string_spec(w)
    else:
        spec = synth.default_pendulum_spec(height=h)
    if initial_angle is not None:
        spec = synth.PendulumSpec(**{**asdict(spec), "initial_angle": initial_angle})
    if cfg.n_sources is not None:
        if cfg.system == "pendulum":
            raise ConfigError("--sources does not apply to the pendulum")
        key = synth.SPEC_TYPES[cfg.system][1]
        items = getattr(spec, key)
        if cfg.n_sources > len(items):
            raise ConfigError(f"profile has only {len(items)} {key}, asked for {cfg.n_sources}")
        spec = copy.deepcopy(spec)
        setattr(spec, key, items[: cfg.n_sources])
    return spec


def generate_clips(cfg: RunConfig) -> list[VideoClip]:
    h, w = cfg.frame_size
    angles = cfg.angles if cfg.system == "pendulum" and cfg.angles else [None]
    return [synth.generate(cfg.system, cfg.n_frames, h, w, cfg.dt, system_spec(cfg, a)) for a in angles]


def clip_names(n: int) -> list[str]:
    return ["clip.ckn"] if n == 1 else [f"clip_{i:02d}.ckn" for i in range(n)]


def checkpoint_context(path: str | Path) -> tuple[Any, dataio.Preprocessor, RunConfig]:
    payload = train.read_checkpoint(path)
    extra = payload.get("extra") or {}
    if "preprocessor" not in extra or "run_config" not in extra:
        raise CheckpointError(f"{path} lacks the preprocessing record written by `ckn train`")
    model = train.load_checkpoint(path)
    return model, dataio.Preprocessor.from_dict(extra["preprocessor"]), RunConfig.from_dict(extra["run_config"])


def check_compatible(model, clip: VideoClip, stack: int) -> None:
    cfg = model.cfg
    h, w, c = clip.frames.shape[1:]
    if (h, w, c * stack) != (cfg.height, cfg.width, cfg.in_channels):
        raise ConfigError(
            f"clip frames {h}x{w}x{c} stacked {stack}x do not fit the checkpoint input "
            f"{cfg.height}x{cfg.width}x{cfg.in_channels}"
        )


# ---------------------------------------------------------------- pipeline


def fit(cfg: RunConfig, clips: list[VideoClip], log_path: Path | None = None):
    """Prepare ``clips`` and train; returns ``(TrainResult, Preprocessor)``."""
    pre = dataio.Preprocessor.fit(clips)
    ds = dataio.SnippetDataset([pre.apply(c) for c in clips], cfg.training.T, cfg.stack)
    return train.train(ds, cfg.model, cfg.training, log_path=log_path), pre


def analyse(model, clip: VideoClip, pre: dataio.Preprocessor, cfg: RunConfig, k: int | None = None,
            keep_all: bool = False) -> tuple[list[modal.ModeReport], list[int]]:
    """Mode table with the selection flag set; ``keep_all`` flags every mode."""
    prepared = pre.apply(clip)
    reports = modal.extract_mode_table(model, prepared, cfg.stack)
    if keep_all:
        selected = [r.mode_index for r in reports]
    else:
        truth = clip.ground_truth
        k = k or cfg.k or (len(truth) if truth else 3)
        selected = modal.select_modes(reports, min(k, len(reports)), cfg.freq_tol, cfg.f_min, cfg.spread_max)
    return modal.mark_distinct(reports, selected), selected


# ------------------------------------------------------------------- plots


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_strip(frames: np.ndarray, path: Path, n: int = 8, title: str | None = None) -> None:
    """Row of ``n`` evenly spaced frames (first channel)."""
    plt = _plt()
    idx = np.linspace(0, len(frames) - 1, min(n, len(frames))).astype(int)
    fig, axes = plt.subplots(1, len(idx), figsize=(1.6 * len(idx), 1.9), squeeze=False)
    lim = float(np.abs(frames[..., 0]).max()) or 1.0
    for ax, i in zip(axes[0], idx):
        ax.imshow(frames[i, ..., 0], cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(str(i), fontsize=7)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.savefig(path, dpi=80, bbox_inches="tight")
    plt.close(fig)


def save_gif(frames: np.ndarray, path: Path, fps: int = 20) -> None:
    import matplotlib
    from PIL import Image

    x = frames[..., 0]
    lo, hi = float(x.min()), float(x.max())
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    rgb = (matplotlib.colormaps["viridis"](x)[..., :3] * 255).astype(np.uint8)
    imgs = [Image.fromarray(f) for f in rgb]
    imgs[0].save(path, save_all=True, append_images=imgs[1:], duration=int(1000 / fps), loop=0)


def plot_eigen_trace(eig: torch.Tensor, dt: float, path: Path, selected: list[int]) -> None:
    plt = _plt()
    arr = eig.double().numpy()
    t = np.arange(len(arr)) * dt
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for i in range(arr.shape[1]):
        style = "-" if i in selected else ":"
        a1.plot(t, np.abs(arr[:, i, 1]) / (2 * np.pi), style, lw=1, label=f"mode {i}")
        a2.plot(t, arr[:, i, 0], style, lw=1)
    a1.set_ylabel("|omega| / 2 pi  (Hz)")
    a2.set_ylabel("mu  (1/s)")
    a2.set_xlabel("time (s)")
    a1.legend(fontsize=6, ncol=4)
    fig.savefig(path, dpi=90, bbox_inches="tight")
    plt.close(fig)


def plot_spectra(eig: torch.Tensor, path: Path, truth: list[float] | None) -> None:
    plt = _plt()
    f = eig[..., 1].abs().double().numpy() / (2 * np.pi)
    fig, ax = plt.subplots(figsize=(7, 3))
    bins = np.linspace(0, max(1.0, float(f.max()) * 1.05), 120)
    for i in range(f.shape[1]):
        ax.hist(f[:, i], bins=bins, histtype="step", label=f"mode {i}")
    for g in truth or []:
        ax.axvline(g, color="k", lw=0.8, ls="--")
    ax.set_xlabel("frequency (Hz)")
    ax.legend(fontsize=6, ncol=4)
    fig.savefig(path, dpi=90, bbox_inches="tight")
    plt.close(fig)


def plot_losses(history: list[dict], path: Path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3))
    ep = [h["epoch"] for h in history]
    for key in ("recon", "pred", "lin", "total"):
        ax.semilogy(ep, [h[key] for h in history], label=key)
    ax.set_xlabel("epoch")
    ax.legend(fontsize=7)
    fig.savefig(path, dpi=90, bbox_inches="tight")
    plt.close(fig)


# ----------------------------------------------------------------- commands


def cmd_generate(args, cfg: RunConfig, run_dir: Path) -> list[Path]:
    clips = generate_clips(cfg)
    for clip, name in zip(clips, clip_names(len(clips))):
        synth.save_clip(clip, run_dir / name)
        log.info("wrote %s  %s frames %dx%d", name, clip.n_frames, *clip.frames.shape[1:3])
    return []


def cmd_train(args, cfg: RunConfig, run_dir: Path) -> list[Path]:
    inputs = [Path(p) for p in args.clip] if args.clip else []
    if inputs:
        clips = [synth.load_clip(p) for p in inputs]
    else:
        clips = generate_clips(cfg)
        log.info("no --clip given, generated %d clip(s) from the %s profile", len(clips), cfg.system)
    shapes = {c.frames.shape[1:] for c in clips}
    if len(shapes) > 1:
        raise ConfigError(f"training clips differ in frame shape: {sorted(shapes)}")
    if len({c.dt for c in clips}) > 1:
        raise ConfigError("training clips differ in dt")
    # the model input follows the data
    h, w, c = shapes.pop()
    cfg.height, cfg.width, cfg.dt = h, w, clips[0].dt
    try:
        cfg.model = EncoderConfig(**{**cfg.model.to_dict(), "height": h, "width": w, "in_channels": c * cfg.stack})
    except ValueError as err:
        raise ConfigError(str(err)) from err
    log_path = run_dir / "log.jsonl"
    try:
        result, pre = fit(cfg, clips, log_path)
    except Diverged as err:
        raise Diverged(f"{err}; per-epoch losses are in {log_path}") from err
    train.save_checkpoint(
        result.model,
        run_dir / "checkpoint.pt",
        result.optimizer_state,
        cfg.training,
        extra={
            "preprocessor": pre.to_dict(),
            "run_config": cfg.to_dict(),
            "best_restart": result.best_restart,
            "final_totals": result.final_totals,
        },
    )
    plot_losses(result.log, run_dir / "loss.png")
    log.info("best restart %d, final total loss %.5g", result.best_restart, result.log[-1]["total"])
    return inputs


def cmd_modes(args, cfg: RunConfig, run_dir: Path) -> list[Path]:
    model, pre, train_cfg = checkpoint_context(args.checkpoint)
    if args.expect_pairs is not None and args.expect_pairs != model.cfg.n_pairs:
        raise CheckpointError(f"checkpoint has M={model.cfg.n_pairs} eigenvalue pairs, expected M={args.expect_pairs}")
    clip = synth.load_clip(args.clip)
    stack = train_cfg.stack
    check_compatible(model, clip, stack)
    analysis_cfg = copy.deepcopy(train_cfg)
    for key in ("k", "freq_tol", "f_min", "spread_max", "rollout_steps"):
        setattr(analysis_cfg, key, getattr(cfg, key) if key != "k" else (cfg.k or train_cfg.k))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reports, selected = analyse(model, clip, pre, analysis_cfg, args.k, args.keep_all)
    for w in caught:
        log.warning("%s", w.message)
    if not selected:
        log.warning("no distinct modes passed selection")
    shown = reports if args.keep_all or args.all_rows else [r for r in reports if r.distinct]
    truth = clip.ground_truth
    modal.write_table(shown, run_dir, truth)
    (run_dir / "modes_all.txt").write_text(modal.format_table(reports, truth) + "\n")
    print(modal.format_table(shown, truth))

    prepared = pre.apply(clip)
    _, eig = modal.embed_clip(model, prepared, stack)
    (run_dir / "eigen_trace.txt").write_text(modal.eigen_trace(eig))
    plot_eigen_trace(eig, clip.dt, run_dir / "eigen_trace.png", selected)
    plot_spectra(eig, run_dir / "spectra.png", truth)

    m = analysis_cfg.rollout_steps
    start = min(args.start, max(0, prepared.n_frames - stack))
    videos = modal.modal_videos(model, prepared, selected, start, m, stack)
    for key, video in videos.items():
        name = "full" if key == "full" else f"mode_{key}"
        frames = video.frames.astype(np.float32)
        synth.save_clip(VideoClip(frames, video.dt, video.meta), run_dir / f"{name}.ckn")
        save_strip(frames, run_dir / f"{name}.png", title=name)
    return [Path(args.checkpoint), Path(args.clip)]


def cmd_dmd(args, cfg: RunConfig, run_dir: Path) -> list[Path]:
    clip = synth.load_clip(args.clip)
    rank = args.rank or cfg.dmd_rank
    res = modal.dmd(clip, rank)
    energy = res.mode_energy()
    rows = ["index re im abs freq_hz growth energy"]
    for i, (lam, f, g, e) in enumerate(zip(res.eigenvalues, res.frequencies, res.growth_rates, energy)):
        rows.append(f"{i} {lam.real:.8g} {lam.imag:.8g} {abs(lam):.8g} {f:.6g} {g:.6g} {e:.6g}")
    (run_dir / "dmd_eigenvalues.txt").write_text("\n".join(rows) + "\n")
    osc = modal.dmd_oscillatory(res, cfg.f_min)
    err = float(np.linalg.norm(res.reconstruct(clip.n_frames) - clip.frames) / (np.linalg.norm(clip.frames) or 1.0))
    summary = {
        "rank": rank,
        "dt": res.dt,
        "oscillatory": [{"frequency_hz": f, "energy": e} for f, e in osc],
        "reconstruction_error": err,
        "ground_truth_hz": clip.ground_truth or [],
    }
    (run_dir / "dmd.json").write_text(json.dumps(summary, indent=2))
    plt = _plt()
    for i in range(rank):
        mode = res.modes[:, i].real.reshape(res.frame_shape)[..., 0]
        fig, ax = plt.subplots(figsize=(3, 3))
        ax.imshow(mode, cmap="RdBu_r")
        ax.set_title(f"DMD mode {i}: {res.frequencies[i]:.3f} Hz", fontsize=8)
        ax.axis("off")
        fig.savefig(run_dir / f"dmd_mode_{i}.png", dpi=80, bbox_inches="tight")
        plt.close(fig)
    print("\n".join(rows))
    print(f"relative reconstruction error {err:.4g}")
    return [Path(args.clip)]


def cmd_render(args, cfg: RunConfig, run_dir: Path) -> list[Path]:
    clip = synth.load_clip(args.clip)
    frames = clip.frames[: args.max_frames]
    stem = Path(args.clip).name.split(".")[0]
    save_strip(frames, run_dir / f"{stem}.png", n=args.strip, title=stem)
    if not args.no_gif:
        save_gif(frames, run_dir / f"{stem}.gif")
    return [Path(args.clip)]


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "modes": cmd_modes,
    "dmd": cmd_dmd,
    "render": cmd_render,
}


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default from config, else 0)")
    common.add_argument("--out", default="runs", help="parent directory for run directories")
    common.add_argument("--config", default=None, help="YAML/JSON run config or a previous manifest.json")
    common.add_argument("--run-name", default=None, help="fixed run directory name instead of a timestamp")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. training.epochs=5")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ckn", description="Convolutional Koopman network toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="render a synthetic system to a clip")
    g.add_argument("--system", choices=synth.SYSTEMS)
    g.add_argument("--frames", type=int)
    g.add_argument("--sources", type=int, help="keep only the first N sources/particles/components")
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--dt", type=float)
    g.add_argument("--angles", help="pendulum initial angles, comma separated (one clip each)")

    t = sub.add_parser("train", parents=[common], help="train a CKN on one or more clips")
    t.add_argument("--system", choices=synth.SYSTEMS, help="profile to start from")
    t.add_argument("--clip", nargs="+", help="clip containers (default: generate from the profile)")
    t.add_argument("--frames", type=int)
    t.add_argument("--height", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--stack", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--restarts", type=int)
    t.add_argument("--snippets-per-epoch", dest="snippets_per_epoch", type=int)
    t.add_argument("--lr", dest="learning_rate", type=float)
    t.add_argument("--no-mask", action="store_true", help="disable input masking")

    m = sub.add_parser("modes", parents=[common], help="mode table and modal videos from a checkpoint")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--clip", required=True)
    m.add_argument("--k", type=int, help="number of modes to select (default: ground truth count)")
    m.add_argument("--keep-all", action="store_true", help="report and render every mode")
    m.add_argument("--all-rows", action="store_true", help="list every mode in the table, flagging the selection")
    m.add_argument("--start", type=int, default=0, help="first frame of the rollout")
    m.add_argument("--expect-pairs", type=int, help="fail unless the checkpoint has this many pairs")

    d = sub.add_parser("dmd", parents=[common], help="exact DMD baseline on a clip")
    d.add_argument("--clip", required=True)
    d.add_argument("--rank", type=int)

    r = sub.add_parser("render", parents=[common], help="frame strip and GIF of a clip")
    r.add_argument("--clip", required=True)
    r.add_argument("--strip", type=int, default=8, help="frames in the PNG strip")
    r.add_argument("--max-frames", type=int, default=200)
    r.add_argument("--no-gif", action="store_true")
    return p


def _setup_logging(run_dir: Path | None, verbose: bool) -> None:
    root = logging.getLogger("ckn")
    root.handlers.clear()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    err = logging.StreamHandler(sys.stderr)
    err.setFormatter(fmt)
    root.addHandler(err)
    if run_dir is not None:
        fh = logging.FileHandler(run_dir / "run.log")
        fh.setFormatter(fmt)
        root.addHandler(fh)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    _setup_logging(None, args.verbose)
    try:
        cfg = resolve_config(args)
    except ConfigError as err:
        log.error("bad config: %s", err)
        return EXIT_CONFIG
    run_dir = make_run_dir(args.out, args.command, args.run_name)
    _setup_logging(run_dir, args.verbose)
    torch.manual_seed(cfg.seed)
    try:
        inputs = COMMANDS[args.command](args, cfg, run_dir)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as err:
        log.error("%s", err)
        return EXIT_CONFIG
    except (Diverged, NonFiniteLoss, FloatingPointError, np.linalg.LinAlgError) as err:
        log.error("numerical failure: %s", err)
        return EXIT_NUMERIC
    finally:
        for h in list(logging.getLogger("ckn").handlers):
            h.close()
    write_manifest(run_dir, args.command, cfg, inputs, argv)
    print(run_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
