"""Stage-2 pansharpening adaptation.

The pre-trained encoders are frozen and used purely as feature extractors;
only the attention-guided fusion head trains. The head merges the per-scale
concatenated [spectral || spatial] features coarse-to-fine and predicts a
residual on top of the upsampled MS image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import losses
from .checkpoint import ROLE_FUSION_HEAD, VERSION, read_container, write_container
from .errors import CorruptionError, FormatError
from .image import ImagePair, Kind, MultibandImage, upsample
from .predictor import FeaturePyramid, NoisePredictor, _init_parameters
from .schedule import NoiseSchedule

MODE_FULL = "FULL_RES"
MODE_REDUCED = "REDUCED_RES"


@dataclass(frozen=True)
class AdaptConfig:
    feature_step: int = 50
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-4
    lam: float = 0.01
    mode: str = MODE_FULL
    attention_enabled: bool = True
    seed: int = 0
    inference_seed: int = 0

    def __post_init__(self):
        if self.feature_step < 1:
            raise ValueError("feature_step must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.mode not in (MODE_FULL, MODE_REDUCED):
            raise ValueError(f"mode must be {MODE_FULL} or {MODE_REDUCED}")

    def as_dict(self) -> dict:
        return {
            "feature_step": self.feature_step,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lambda": self.lam,
            "mode": self.mode,
            "attention_enabled": self.attention_enabled,
            "seed": self.seed,
            "inference_seed": self.inference_seed,
        }


class ScSE(nn.Module):
    """Concurrent spatial and channel squeeze-and-excitation, combined by sum."""

    def __init__(self, channels: int):
        super().__init__()
        if channels < 2:
            raise ValueError("scSE needs at least 2 channels")
        self.fc1 = nn.Linear(channels, channels // 2)
        self.fc2 = nn.Linear(channels // 2, channels)
        self.spatial = nn.Conv2d(channels, 1, 1)

    def forward(self, x):
        pooled = x.mean(dim=(2, 3))
        gate_c = torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))
        cse = x * gate_c[:, :, None, None]
        gate_s = torch.sigmoid(self.spatial(x))
        sse = x * gate_s
        return cse + sse


class _AttentionLayer(nn.Module):
    def __init__(self, channels: int, attention_enabled: bool):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        self.scse = ScSE(channels) if attention_enabled else nn.Identity()

    def forward(self, x):
        return self.scse(self.act(self.conv(x)))


class FusionHead(nn.Module):
    """Attention layers per pyramid level plus a two-conv residual decoder.

    ``level_channels`` lists the concatenated feature widths finest first.
    Coarse outputs are nearest-upsampled, projected to the next level's
    width by a 1x1 conv, and added to that level's attention output.
    """

    def __init__(self, level_channels: tuple[int, ...], out_bands: int,
                 attention_enabled: bool = True):
        super().__init__()
        level_channels = tuple(int(c) for c in level_channels)
        if len(level_channels) < 1 or any(c < 2 for c in level_channels):
            raise ValueError(f"bad level channels {level_channels}")
        if out_bands < 1:
            raise ValueError("out_bands must be positive")
        self.level_channels = level_channels
        self.out_bands = out_bands
        self.attention_enabled = attention_enabled
        self.attn = nn.ModuleList(
            _AttentionLayer(c, attention_enabled) for c in level_channels)
        # proj[k-1] maps level k width down to level k-1 width after upsampling
        self.proj = nn.ModuleList(
            nn.Conv2d(level_channels[k], level_channels[k - 1], 1)
            for k in range(1, len(level_channels)))
        c0 = level_channels[0]
        self.recon1 = nn.Conv2d(c0, c0, 3, padding=1)
        self.recon2 = nn.Conv2d(c0, out_bands, 3, padding=1)

    def residual(self, feats: list[torch.Tensor]) -> torch.Tensor:
        """Residual map from pyramid features (finest first), before clipping."""
        if len(feats) != len(self.attn):
            raise ValueError(f"expected {len(self.attn)} pyramid levels, got {len(feats)}")
        levels = len(feats)
        h = self.attn[levels - 1](feats[levels - 1])
        for k in range(levels - 2, -1, -1):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.attn[k](feats[k]) + self.proj[k](h)
        return self.recon2(F.leaky_relu(self.recon1(h), 0.2))

    def forward(self, feats: list[torch.Tensor], ms_up: torch.Tensor) -> torch.Tensor:
        return torch.clamp(ms_up + self.residual(feats), 0.0, 1.0)


def concat_level_channels(p2m_config, m2p_config) -> tuple[int, ...]:
    """Per-level widths of the [spectral || spatial] concatenated pyramid."""
    if p2m_config.level_channels != m2p_config.level_channels:
        raise ValueError("P2M and M2P encoders must share level widths")
    return tuple(2 * c for c in p2m_config.level_channels)


def build_fusion_head(level_channels, out_bands: int, rng: torch.Generator,
                      attention_enabled: bool = True) -> FusionHead:
    """Fusion head with generator-driven init and a zero final conv."""
    head = FusionHead(tuple(level_channels), out_bands, attention_enabled)
    _init_parameters(head, rng)
    with torch.no_grad():
        head.recon2.weight.zero_()
        head.recon2.bias.zero_()
    return head


def _img_bchw(img, dtype) -> torch.Tensor:
    raw = img.data if isinstance(img, MultibandImage) else np.asarray(img)
    return torch.from_numpy(np.array(raw)).to(dtype).permute(2, 0, 1).unsqueeze(0)


def _extract_batch(p2m: NoisePredictor, m2p: NoisePredictor,
                   pan_b: torch.Tensor, msup_b: torch.Tensor, t_feat: int,
                   schedule: NoiseSchedule, rng: torch.Generator,
                   noise=None) -> list[torch.Tensor]:
    """Concatenated [spectral || spatial] encoder taps for a (B, C, H, W) batch."""
    g = schedule.gamma(t_feat)
    dtype = msup_b.dtype
    if noise is None:
        eps_ms = torch.randn(msup_b.shape, generator=rng, dtype=torch.float64).to(dtype)
        eps_pan = torch.randn(pan_b.shape, generator=rng, dtype=torch.float64).to(dtype)
    else:
        eps_ms, eps_pan = (e.to(dtype) for e in noise)
    ms_noisy = math.sqrt(g) * msup_b + math.sqrt(1.0 - g) * eps_ms
    pan_noisy = math.sqrt(g) * pan_b + math.sqrt(1.0 - g) * eps_pan
    tb = torch.full((pan_b.shape[0],), t_feat, dtype=torch.long)
    with torch.no_grad():
        spectral = p2m.encode(ms_noisy, pan_b, tb)
        spatial = m2p.encode(pan_noisy, msup_b, tb)
    return [torch.cat([spec, spat], dim=1) for spec, spat in zip(spectral, spatial)]


def extract_fusion_features(p2m: NoisePredictor, m2p: NoisePredictor,
                            pan, ms_up, t_feat: int, schedule: NoiseSchedule,
                            rng: torch.Generator, noise=None) -> FeaturePyramid:
    """Frozen-encoder feature pyramid for one PAN / upsampled-MS pair.

    Both encoder inputs are noised to ``t_feat`` with draws from ``rng``
    (the MS noise first, then the PAN noise). ``noise`` injects explicit
    (eps_ms, eps_pan) tensors instead, for reproducibility studies.
    """
    pan_raw = pan.data if isinstance(pan, MultibandImage) else np.asarray(pan)
    ms_raw = ms_up.data if isinstance(ms_up, MultibandImage) else np.asarray(ms_up)
    if pan_raw.shape[:2] != ms_raw.shape[:2]:
        raise ValueError(f"pan dims {pan_raw.shape[:2]} != ms_up dims {ms_raw.shape[:2]}")
    dtype = next(p2m.parameters()).dtype
    pan_b = _img_bchw(pan, dtype)
    msup_b = _img_bchw(ms_up, dtype)
    if noise is not None:
        noise = tuple(n.permute(2, 0, 1).unsqueeze(0) if n.ndim == 3 else n for n in noise)
    feats = _extract_batch(p2m, m2p, pan_b, msup_b, t_feat, schedule, rng, noise)
    levels = tuple(
        (2 ** k, f.squeeze(0).permute(1, 2, 0).numpy().copy())
        for k, f in enumerate(feats)
    )
    return FeaturePyramid(levels)


def fuse(head: FusionHead, pyramid: FeaturePyramid, ms_up) -> MultibandImage:
    """Run the fusion head on a feature pyramid: FMS = clip(ms_up + residual)."""
    if pyramid.num_levels != len(head.attn):
        raise ValueError(f"pyramid has {pyramid.num_levels} levels, head expects {len(head.attn)}")
    ms_raw = ms_up.data if isinstance(ms_up, MultibandImage) else np.asarray(ms_up)
    if pyramid.features(0).shape[:2] != ms_raw.shape[:2]:
        raise ValueError("ms_up dims must match the finest pyramid level")
    dtype = next(head.parameters()).dtype
    feats = [torch.from_numpy(np.array(f)).to(dtype).permute(2, 0, 1).unsqueeze(0)
             for _, f in pyramid.levels]
    msup_b = _img_bchw(ms_up, dtype)
    with torch.no_grad():
        fms = head(feats, msup_b)
    return MultibandImage(fms.squeeze(0).permute(1, 2, 0).numpy(), Kind.FUSED)


def _normalize_dataset(dataset) -> list[tuple[ImagePair, MultibandImage | None]]:
    items = []
    for entry in dataset:
        if isinstance(entry, ImagePair):
            items.append((entry, None))
        else:
            pair, ref = entry[0], entry[1]
            items.append((pair, ref))
    return items


def _snapshot(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().numpy().copy() for k, v in module.state_dict().items()}


def adapt(p2m: NoisePredictor, m2p: NoisePredictor, head: FusionHead,
          dataset, cfg: AdaptConfig, schedule: NoiseSchedule,
          log_path=None, qnr_block: int = 32) -> FusionHead:
    """Train the fusion head only; the predictors stay bit-frozen.

    FULL_RES optimizes the unsupervised composite loss on original-scale
    pairs; REDUCED_RES optimizes L1 against each sample's reference. Writes
    ``epoch=<n> loss=<f>`` lines when ``log_path`` is given.
    """
    items = _normalize_dataset(dataset)
    if not items:
        raise ValueError("dataset must be non-empty")
    if cfg.feature_step > schedule.horizon:
        raise ValueError(f"feature_step {cfg.feature_step} exceeds horizon {schedule.horizon}")
    if cfg.mode == MODE_REDUCED and any(ref is None for _, ref in items):
        raise ValueError("REDUCED_RES adaptation requires reference images")

    p2m.requires_grad_(False)
    m2p.requires_grad_(False)
    before_p2m, before_m2p = _snapshot(p2m), _snapshot(m2p)

    dtype = next(head.parameters()).dtype
    pan_all = torch.stack([_img_bchw(pair.pan, dtype).squeeze(0) for pair, _ in items])
    msup_all = torch.stack([
        _img_bchw(upsample(pair.ms, pair.ratio), dtype).squeeze(0) for pair, _ in items])
    refs = [ref for _, ref in items]

    opt = torch.optim.AdamW(head.parameters(), lr=cfg.learning_rate,
                            betas=(0.9, 0.999), weight_decay=0.01)
    shuffle_rng = np.random.default_rng(cfg.seed)
    noise_rng = torch.Generator().manual_seed(cfg.seed + 1)

    log = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            perm = shuffle_rng.permutation(len(items))
            epoch_losses = []
            for start in range(0, len(items), cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                sel = torch.from_numpy(np.ascontiguousarray(idx))
                pan_b = pan_all[sel]
                msup_b = msup_all[sel]
                feats = _extract_batch(p2m, m2p, pan_b, msup_b,
                                       cfg.feature_step, schedule, noise_rng)
                fms_b = head(feats, msup_b)
                terms = []
                for row, i in enumerate(idx):
                    fms_hwc = fms_b[row].permute(1, 2, 0)
                    if cfg.mode == MODE_REDUCED:
                        terms.append(losses.loss_reduced(fms_hwc, refs[i]))
                    else:
                        pair = items[i][0]
                        report = losses.loss_full(pair.ms, pair.pan, fms_hwc,
                                                  pair.ratio, cfg.lam, qnr_block)
                        terms.append(report.total)
                loss = torch.stack(terms).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                epoch_losses.append(loss.item())
            if log is not None:
                log.write(f"epoch={epoch} loss={np.mean(epoch_losses):.10g}\n")
                log.flush()
    finally:
        if log is not None:
            log.close()

    for name, module, before in (("p2m", p2m, before_p2m), ("m2p", m2p, before_m2p)):
        after = _snapshot(module)
        for key in before:
            if not np.array_equal(before[key], after[key]):
                raise RuntimeError(f"frozen {name} parameter {key} changed during adaptation")
    return head


def pansharpen(p2m: NoisePredictor, m2p: NoisePredictor, head: FusionHead,
               pair: ImagePair, cfg: AdaptConfig,
               schedule: NoiseSchedule) -> MultibandImage:
    """Fuse one PAN/MS pair with the trained components.

    Deterministic: feature-extraction noise comes from a generator seeded
    with ``cfg.inference_seed``.
    """
    if p2m.config.in_bands != pair.ms.bands or p2m.config.cond_bands != pair.pan.bands:
        raise ValueError("pair band counts do not match the P2M predictor")
    if m2p.config.in_bands != pair.pan.bands or m2p.config.cond_bands != pair.ms.bands:
        raise ValueError("pair band counts do not match the M2P predictor")
    if cfg.feature_step > schedule.horizon:
        raise ValueError(f"feature_step {cfg.feature_step} exceeds horizon {schedule.horizon}")
    ms_up = upsample(pair.ms, pair.ratio)
    rng = torch.Generator().manual_seed(cfg.inference_seed)
    pyramid = extract_fusion_features(p2m, m2p, pair.pan, ms_up,
                                      cfg.feature_step, schedule, rng)
    return fuse(head, pyramid, ms_up)


def save_fusion_head(head: FusionHead, path, *, adapt_config=None, epoch: int = 0,
                     schedule_offset: float = 0.008) -> None:
    """Persist a fusion head in the shared checkpoint container format."""
    meta = {
        "format_version": VERSION,
        "role": ROLE_FUSION_HEAD,
        "config": {
            "level_channels": list(head.level_channels),
            "out_bands": head.out_bands,
            "attention_enabled": head.attention_enabled,
        },
        "train": dict(adapt_config) if adapt_config else None,
        "epoch": epoch,
        "schedule_offset": schedule_offset,
    }
    arrays = {k: v.detach().numpy() for k, v in head.state_dict().items()}
    write_container(path, meta, arrays)


def load_fusion_head(path) -> FusionHead:
    """Rebuild a fusion head with bit-identical parameters."""
    meta, arrays = read_container(path)
    if meta.get("role") != ROLE_FUSION_HEAD:
        raise FormatError(f"{path}: holds a {meta.get('role')} checkpoint, not a fusion head")
    cfg = meta["config"]
    head = FusionHead(tuple(cfg["level_channels"]), cfg["out_bands"],
                      cfg["attention_enabled"])
    expected = set(head.state_dict().keys())
    if expected != set(arrays.keys()):
        raise CorruptionError(f"{path}: fusion head parameter names do not match")
    with torch.no_grad():
        for name, param in head.named_parameters():
            param.data = torch.from_numpy(arrays[name]).clone()
    return head
