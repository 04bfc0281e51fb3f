"""Conditional UNet noise predictor and its encoder feature taps.

The network predicts the noise injected into its first input (the noisy
target); the condition image enters by channel concatenation at the input
convolution. Encoder activations after each level's residual stack, before
downsampling, double as the multi-scale feature pyramid used by the fusion
stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .image import MultibandImage

ROLE_P2M = "P2M"
ROLE_M2P = "M2P"


@dataclass(frozen=True)
class PredictorConfig:
    in_bands: int
    cond_bands: int
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    res_blocks_per_level: int = 2
    time_embed_dim: int = 128
    norm_groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        for name in ("in_bands", "cond_bands", "base_channels",
                     "res_blocks_per_level", "time_embed_dim", "norm_groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if len(self.channel_mults) < 2:
            raise ValueError("channel_mults needs at least 2 levels")
        if any(m < 1 for m in self.channel_mults):
            raise ValueError("channel_mults must be positive")
        if self.base_channels % self.norm_groups:
            raise ValueError("base_channels must be divisible by norm_groups")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")

    @property
    def levels(self) -> int:
        return len(self.channel_mults)

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_mults)


@dataclass(frozen=True)
class FeaturePyramid:
    """Per-scale encoder activations, finest (divisor 1) first."""

    levels: tuple[tuple[int, np.ndarray], ...]

    def __post_init__(self):
        divisors = [d for d, _ in self.levels]
        if not divisors or divisors[0] != 1:
            raise ValueError("pyramid must start at scale divisor 1")
        for a, b in zip(divisors, divisors[1:]):
            if b != 2 * a:
                raise ValueError("scale divisors must double per level")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def features(self, level: int) -> np.ndarray:
        return self.levels[level][1]


def sinusoidal_time_embedding(t: float, dim: int) -> np.ndarray:
    """Raw interleaved sin/cos positional encoding of a scalar step index."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    i = np.arange(dim // 2, dtype=np.float64)
    freqs = 1.0 / np.power(10000.0, 2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(t * freqs)
    out[1::2] = np.cos(t * freqs)
    return out


def _time_encoding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Batched torch twin of :func:`sinusoidal_time_embedding`."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    i = torch.arange(dim // 2, dtype=t.dtype, device=t.device)
    freqs = torch.pow(torch.tensor(10000.0, dtype=t.dtype), -2.0 * i / dim)
    args = t[:, None] * freqs[None, :]
    out = torch.empty(t.shape[0], dim, dtype=t.dtype)
    out[:, 0::2] = torch.sin(args)
    out[:, 1::2] = torch.cos(args)
    return out


class ResidualBlock(nn.Module):
    """norm -> SiLU -> conv, time projection added between the two convs."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class NoisePredictor(nn.Module):
    """Conditional UNet epsilon(x_t, cond, t) with tap-able encoder levels."""

    def __init__(self, config: PredictorConfig, role: str):
        super().__init__()
        if role not in (ROLE_P2M, ROLE_M2P):
            raise ValueError(f"role must be {ROLE_P2M} or {ROLE_M2P}, got {role!r}")
        self.config = config
        self.role = role
        chans = config.level_channels
        emb_dim = 4 * config.time_embed_dim
        groups = config.norm_groups
        blocks = config.res_blocks_per_level

        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_embed_dim, emb_dim),
            nn.SiLU(),
            nn.Linear(emb_dim, emb_dim),
        )
        self.stem = nn.Conv2d(config.in_bands + config.cond_bands,
                              config.base_channels, 3, padding=1)

        self.enc_levels = nn.ModuleList()
        self.downs = nn.ModuleList()
        ch = config.base_channels
        for k, ck in enumerate(chans):
            level = nn.ModuleList()
            for _ in range(blocks):
                level.append(ResidualBlock(ch, ck, emb_dim, groups))
                ch = ck
            self.enc_levels.append(level)
            if k < len(chans) - 1:
                self.downs.append(nn.Conv2d(ck, ck, 3, stride=2, padding=1))

        self.mid = nn.ModuleList([
            ResidualBlock(chans[-1], chans[-1], emb_dim, groups),
            ResidualBlock(chans[-1], chans[-1], emb_dim, groups),
        ])

        self.dec_levels = nn.ModuleList()
        self.up_convs = nn.ModuleList()
        for k, ck in enumerate(chans):
            level = nn.ModuleList()
            ch = 2 * ck
            for _ in range(blocks):
                level.append(ResidualBlock(ch, ck, emb_dim, groups))
                ch = ck
            self.dec_levels.append(level)
            if k > 0:
                # applied when moving from level k up to level k-1
                self.up_convs.append(nn.Conv2d(ck, chans[k - 1], 3, padding=1))

        self.out_norm = nn.GroupNorm(groups, chans[0])
        self.out_conv = nn.Conv2d(chans[0], config.in_bands, 3, padding=1)

    def _check_inputs(self, x: torch.Tensor, cond: torch.Tensor) -> None:
        cfg = self.config
        if x.shape[1] != cfg.in_bands:
            raise ValueError(f"noisy target has {x.shape[1]} channels, expected {cfg.in_bands}")
        if cond.shape[1] != cfg.cond_bands:
            raise ValueError(f"condition has {cond.shape[1]} channels, expected {cfg.cond_bands}")
        if x.shape[2:] != cond.shape[2:]:
            raise ValueError(f"spatial dims differ: {tuple(x.shape[2:])} vs {tuple(cond.shape[2:])}")
        div = 2 ** (cfg.levels - 1)
        if x.shape[2] % div or x.shape[3] % div:
            raise ValueError(f"spatial dims {tuple(x.shape[2:])} must be divisible by {div}")

    def _embed(self, t: torch.Tensor) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        return self.time_mlp(_time_encoding(t.to(dtype), self.config.time_embed_dim))

    def _encode(self, x, cond, emb):
        taps = []
        h = self.stem(torch.cat([x, cond], dim=1))
        for k, level in enumerate(self.enc_levels):
            for blk in level:
                h = blk(h, emb)
            taps.append(h)
            if k < len(self.enc_levels) - 1:
                h = self.downs[k](h)
        return h, taps

    def forward(self, x: torch.Tensor, cond: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        self._check_inputs(x, cond)
        emb = self._embed(t)
        h, taps = self._encode(x, cond, emb)
        for blk in self.mid:
            h = blk(h, emb)
        for k in range(len(self.dec_levels) - 1, -1, -1):
            h = torch.cat([h, taps[k]], dim=1)
            for blk in self.dec_levels[k]:
                h = blk(h, emb)
            if k > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.up_convs[k - 1](h)
        return self.out_conv(F.silu(self.out_norm(h)))

    def encode(self, x: torch.Tensor, cond: torch.Tensor, t: torch.Tensor) -> list[torch.Tensor]:
        """Encoder taps only (post residual stack, pre downsample), finest first."""
        self._check_inputs(x, cond)
        emb = self._embed(t)
        _, taps = self._encode(x, cond, emb)
        return taps


def _init_parameters(module: nn.Module, rng: torch.Generator) -> None:
    """Standard conv/linear init driven by an explicit generator."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5), generator=rng)
            if m.bias is not None:
                fan_in = nn.init._calculate_correct_fan(m.weight, "fan_in")
                bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
                with torch.no_grad():
                    m.bias.uniform_(-bound, bound, generator=rng)


def build_predictor(config: PredictorConfig, rng: torch.Generator,
                    role: str = ROLE_P2M) -> NoisePredictor:
    """Construct a predictor with generator-driven init and a zero output conv."""
    model = NoisePredictor(config, role)
    _init_parameters(model, rng)
    with torch.no_grad():
        model.out_conv.weight.zero_()
        model.out_conv.bias.zero_()
    return model


def _image_to_bchw(img, dtype) -> torch.Tensor:
    raw = img.data if isinstance(img, MultibandImage) else img
    if isinstance(raw, torch.Tensor):
        t = raw.to(dtype)
    else:
        t = torch.from_numpy(np.array(raw)).to(dtype)
    return t.permute(2, 0, 1).unsqueeze(0)


def predict_noise(predictor: NoisePredictor, x_t, cond, t: int) -> np.ndarray:
    """Noise estimate for a single image, returned channel-last."""
    dtype = next(predictor.parameters()).dtype
    xb = _image_to_bchw(x_t, dtype)
    cb = _image_to_bchw(cond, dtype)
    tb = torch.full((1,), t, dtype=torch.long)
    with torch.no_grad():
        eps = predictor(xb, cb, tb)
    return eps.squeeze(0).permute(1, 2, 0).numpy()


def encode_features(predictor: NoisePredictor, x_t, cond, t: int) -> FeaturePyramid:
    """Frozen-encoder feature pyramid for a single image.

    No gradient flows into the predictor; features are detached copies.
    """
    dtype = next(predictor.parameters()).dtype
    xb = _image_to_bchw(x_t, dtype)
    cb = _image_to_bchw(cond, dtype)
    tb = torch.full((1,), t, dtype=torch.long)
    with torch.no_grad():
        taps = predictor.encode(xb, cb, tb)
    levels = tuple(
        (2 ** k, tap.squeeze(0).permute(1, 2, 0).numpy().copy())
        for k, tap in enumerate(taps)
    )
    return FeaturePyramid(levels)
