"""Convolutional encoder/decoder and the auxiliary eigenvalue network.

Frame stacks enter and leave as channels-last tensors ``(B, h, w, c)``; the
modules work channels-first internally.

Hidden layers apply ``conv/dense -> ReLU -> BatchNorm -> Dropout``. The embedding
layer, the decoder's reshape layer, the decoder output and the auxiliary output
are linear, with no normalization or dropout.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import koopman

N_STAGES = 3


@dataclass
class EncoderConfig:
    conv_filters: tuple[int, ...] = (32, 32, 32)
    kernel: int = 3
    pool: int = 2
    dense_widths: tuple[int, ...] = (64,)
    dropout_rate: float = 0.75
    use_batch_norm: bool = True
    n_pairs: int = 8
    in_channels: int = 1
    height: int = 64
    width: int = 64
    aux_widths: tuple[int, ...] = (64,)
    # "global": one network on the whole embedding; "radial": one network per pair on its squared radius
    aux_mode: str = "radial"
    # auxiliary output units: omega = 2 pi * freq_scale * raw, mu = mu_scale * raw
    freq_scale: float = 10.0
    mu_scale: float = 1.0
    init_freq_range: tuple[float, float] = (0.5, 12.0)
    aux_init_gain: float = 0.1

    def __post_init__(self):
        self.conv_filters = tuple(self.conv_filters)
        self.dense_widths = tuple(self.dense_widths)
        self.aux_widths = tuple(self.aux_widths)
        self.init_freq_range = tuple(self.init_freq_range)
        if len(self.conv_filters) != N_STAGES:
            raise ValueError(f"encoder needs exactly {N_STAGES} conv stages, got {len(self.conv_filters)}")
        div = self.pool**N_STAGES
        if self.height % div or self.width % div:
            raise ValueError(
                f"input {self.height}x{self.width} is not divisible by {div} (three pool-by-{self.pool} stages)"
            )
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.aux_mode not in ("global", "radial"):
            raise ValueError(f"aux_mode must be 'global' or 'radial', got {self.aux_mode!r}")

    @property
    def latent_dim(self) -> int:
        return 2 * self.n_pairs

    @property
    def bottleneck(self) -> tuple[int, int, int]:
        div = self.pool**N_STAGES
        return self.conv_filters[-1], self.height // div, self.width // div

    def to_dict(self) -> dict:
        return asdict(self)


def _hidden(layer: nn.Module, width: int, cfg: EncoderConfig, conv: bool) -> list[nn.Module]:
    mods = [layer, nn.ReLU()]
    if cfg.use_batch_norm:
        mods.append(nn.BatchNorm2d(width) if conv else nn.BatchNorm1d(width))
    if cfg.dropout_rate > 0:
        mods.append(nn.Dropout(cfg.dropout_rate))
    return mods


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        pad = cfg.kernel // 2
        layers, c_in = [], cfg.in_channels
        for f in cfg.conv_filters:
            layers += _hidden(nn.Conv2d(c_in, f, cfg.kernel, padding=pad), f, cfg, conv=True)
            layers.append(nn.MaxPool2d(cfg.pool))
            c_in = f
        layers.append(nn.Flatten())
        n_in = int(np.prod(cfg.bottleneck))
        for w in cfg.dense_widths:
            layers += _hidden(nn.Linear(n_in, w), w, cfg, conv=False)
            n_in = w
        layers.append(nn.Linear(n_in, cfg.latent_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x.permute(0, 3, 1, 2))


class Decoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        pad = cfg.kernel // 2
        layers, n_in = [], cfg.latent_dim
        for w in reversed(cfg.dense_widths):
            layers += _hidden(nn.Linear(n_in, w), w, cfg, conv=False)
            n_in = w
        layers += [nn.Linear(n_in, int(np.prod(cfg.bottleneck))), nn.Unflatten(1, cfg.bottleneck)]
        chans = list(reversed(cfg.conv_filters)) + [cfg.in_channels]
        for i in range(N_STAGES):
            layers.append(nn.Upsample(scale_factor=cfg.pool, mode="nearest"))
            tconv = nn.ConvTranspose2d(chans[i], chans[i + 1], cfg.kernel, padding=pad)
            if i < N_STAGES - 1:
                layers += _hidden(tconv, chans[i + 1], cfg, conv=True)
            else:
                layers.append(tconv)
        self.net = nn.Sequential(*layers)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(y).permute(0, 2, 3, 1)


def _init_aux_output(weight: torch.Tensor, bias: torch.Tensor, cfg: EncoderConfig) -> None:
    """Shrink the output weights and spread the initial frequencies over ``init_freq_range``."""
    with torch.no_grad():
        weight.mul_(cfg.aux_init_gain)
        bias = bias.view(cfg.n_pairs, 2)
        bias[:, 0] = 0.0
        lo, hi = cfg.init_freq_range
        bias[:, 1] = torch.linspace(lo, hi, cfg.n_pairs) / cfg.freq_scale


class Auxiliary(nn.Module):
    """Maps the whole embedding to ``(mu, omega)`` for every pair, shape ``(B, M, 2)``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        layers, n_in = [], cfg.latent_dim
        for w in cfg.aux_widths:
            layers += [nn.Linear(n_in, w), nn.ReLU()]
            n_in = w
        self.out = nn.Linear(n_in, cfg.latent_dim)
        layers.append(self.out)
        self.net = nn.Sequential(*layers)
        self.n_pairs = cfg.n_pairs
        self.register_buffer("scale", torch.tensor([cfg.mu_scale, 2 * math.pi * cfg.freq_scale]))
        _init_aux_output(self.out.weight, self.out.bias, cfg)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        raw = self.net(y).view(*y.shape[:-1], self.n_pairs, 2)
        return raw * self.scale.to(raw.dtype)


class PairLinear(nn.Module):
    """``M`` independent dense layers applied pair-wise to ``(..., M, n_in)``."""

    def __init__(self, n_pairs: int, n_in: int, n_out: int):
        super().__init__()
        bound = 1 / math.sqrt(n_in)
        self.weight = nn.Parameter(torch.empty(n_pairs, n_in, n_out).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.empty(n_pairs, n_out).uniform_(-bound, bound))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.einsum("...mi,mio->...mo", x, self.weight) + self.bias


class RadialAuxiliary(nn.Module):
    """Per-pair networks mapping the squared pair radius to that pair's ``(mu, omega)``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        layers, n_in = [], 1
        for w in cfg.aux_widths:
            layers += [PairLinear(cfg.n_pairs, n_in, w), nn.ReLU()]
            n_in = w
        self.out = PairLinear(cfg.n_pairs, n_in, 2)
        layers.append(self.out)
        self.net = nn.Sequential(*layers)
        self.n_pairs = cfg.n_pairs
        self.register_buffer("scale", torch.tensor([cfg.mu_scale, 2 * math.pi * cfg.freq_scale]))
        _init_aux_output(self.out.weight, self.out.bias, cfg)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        r2 = y[..., 0::2] ** 2 + y[..., 1::2] ** 2
        raw = self.net(r2[..., None])
        return raw * self.scale.to(raw.dtype)


class CKN(nn.Module):
    """Encoder, decoder and auxiliary network together with their configuration."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.aux = Auxiliary(cfg) if cfg.aux_mode == "global" else RadialAuxiliary(cfg)
        # channels-last convolution kernels run markedly faster on CPU
        self.to(memory_format=torch.channels_last)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h, w, c = x.shape[-3:]
        if (h, w, c) != (self.cfg.height, self.cfg.width, self.cfg.in_channels):
            div = self.cfg.pool**N_STAGES
            if h % div or w % div:
                raise ValueError(f"input spatial dims {h}x{w} are not divisible by {div}")
            raise ValueError(
                f"input frame stack {h}x{w}x{c} does not match the model's "
                f"{self.cfg.height}x{self.cfg.width}x{self.cfg.in_channels}"
            )
        return self.encoder(x)

    def decode(self, y: torch.Tensor) -> torch.Tensor:
        return self.decoder(y)

    def eigvals(self, y: torch.Tensor) -> torch.Tensor:
        return self.aux(y)

    def rollout(self, y1: torch.Tensor, m: int, dt: float, freeze: bool = False) -> list[torch.Tensor]:
        return koopman.rollout(self.aux, y1, m, dt, freeze=freeze)


def param_count(cfg: EncoderConfig) -> int:
    """Number of trainable parameters implied by ``cfg`` (BatchNorm affine terms included)."""
    k2 = cfg.kernel**2
    bn = 2 if cfg.use_batch_norm else 0
    total, c_in = 0, cfg.in_channels
    for f in cfg.conv_filters:
        total += c_in * f * k2 + f + bn * f
        c_in = f
    n_in = int(np.prod(cfg.bottleneck))
    flat = n_in
    for w in cfg.dense_widths:
        total += n_in * w + w + bn * w
        n_in = w
    total += n_in * cfg.latent_dim + cfg.latent_dim
    # decoder mirrors
    n_in = cfg.latent_dim
    for w in reversed(cfg.dense_widths):
        total += n_in * w + w + bn * w
        n_in = w
    total += n_in * flat + flat
    chans = list(reversed(cfg.conv_filters)) + [cfg.in_channels]
    for i in range(N_STAGES):
        total += chans[i] * chans[i + 1] * k2 + chans[i + 1]
        if i < N_STAGES - 1:
            total += bn * chans[i + 1]
    if cfg.aux_mode == "global":
        n_in = cfg.latent_dim
        for w in cfg.aux_widths:
            total += n_in * w + w
            n_in = w
        total += n_in * cfg.latent_dim + cfg.latent_dim
    else:
        n_in = 1
        for w in cfg.aux_widths:
            total += cfg.n_pairs * (n_in * w + w)
            n_in = w
        total += cfg.n_pairs * (n_in * 2 + 2)
    return total


@contextmanager
def _mode(model: nn.Module, training: bool, seed: int | None):
    was = model.training
    model.train(training)
    try:
        if seed is None:
            yield
        else:
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(seed)
                yield
    finally:
        model.train(was)


def _batch(x) -> tuple[torch.Tensor, bool]:
    x = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x)
    single = x.dim() == 3
    return (x[None] if single else x), single


def encode(model: CKN, frame_stack, training: bool = False, seed: int | None = None) -> torch.Tensor:
    """Embed ``(h, w, c)`` or ``(B, h, w, c)`` frame stacks. Training mode enables dropout and batch statistics."""
    x, single = _batch(frame_stack)
    x = x.to(next(model.parameters()).dtype)
    with _mode(model, training, seed):
        y = model.encode(x)
    return y[0] if single else y


def decode(model: CKN, y, training: bool = False, seed: int | None = None) -> torch.Tensor:
    y = torch.as_tensor(y).to(next(model.parameters()).dtype)
    single = y.dim() == 1
    with _mode(model, training, seed):
        x = model.decode(y[None] if single else y)
    return x[0] if single else x


def aux_eigvals(model: CKN, y) -> list[koopman.EigenPair]:
    y = torch.as_tensor(y).to(next(model.parameters()).dtype)
    with _mode(model, False, None), torch.no_grad():
        eig = model.eigvals(y)
    return koopman.to_pairs(eig)
