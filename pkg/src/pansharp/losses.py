"""Training losses and their constituent filters.

Everything here runs on torch in double precision regardless of the input
dtype, so the differentiable loss path agrees with the numpy evaluation
metrics to tight tolerances and finite-difference gradient checks are
well conditioned. Inputs may be MultibandImage, numpy arrays, or torch
tensors (channel-last); tensors stay connected to the autograd graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .image import Kind, MultibandImage, gaussian_kernel_1d, upsample, upsample_array
from .metrics import lowres_pan

HP_KERNEL_SIZE = 5
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_hwc(x) -> torch.Tensor:
    """Channel-last double tensor; keeps tensors in the autograd graph."""
    if isinstance(x, MultibandImage):
        x = x.data
    if isinstance(x, torch.Tensor):
        t = x.to(torch.float64)
    else:
        t = torch.from_numpy(np.array(x, dtype=np.float64))
    if t.ndim == 2:
        t = t[:, :, None]
    if t.ndim != 3:
        raise ValueError(f"expected a rank-3 (H, W, C) input, got shape {tuple(t.shape)}")
    return t


def _nchw(t: torch.Tensor) -> torch.Tensor:
    return t.permute(2, 0, 1).unsqueeze(0)


def _hwc(t: torch.Tensor) -> torch.Tensor:
    return t.squeeze(0).permute(1, 2, 0)


def _depthwise(x: torch.Tensor, kernel2d: torch.Tensor, pad: int) -> torch.Tensor:
    """Per-band 2-D correlation with reflect padding (no edge repeat)."""
    c = x.shape[1]
    weight = kernel2d[None, None].expand(c, 1, *kernel2d.shape)
    if pad:
        x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    return F.conv2d(x, weight, groups=c)


def get_hp(img):
    """High-pass residual: the image minus its 5x5 box-filtered version."""
    t = _as_hwc(img)
    kernel = torch.full((HP_KERNEL_SIZE, HP_KERNEL_SIZE),
                        1.0 / HP_KERNEL_SIZE ** 2, dtype=torch.float64)
    low = _hwc(_depthwise(_nchw(t), kernel, pad=HP_KERNEL_SIZE // 2))
    out = t - low
    if isinstance(img, MultibandImage):
        return MultibandImage(out.numpy(), Kind.NOISE_STATE)
    return out


def gaussian_blur(img, ratio: int):
    """Per-band Gaussian blur with sigma = ratio/2 and radius ceil(3*sigma)."""
    if ratio < 1:
        raise ValueError(f"ratio must be positive, got {ratio}")
    t = _as_hwc(img)
    k1 = torch.from_numpy(gaussian_kernel_1d(ratio / 2.0))
    kernel = k1[:, None] * k1[None, :]
    out = _hwc(_depthwise(_nchw(t), kernel, pad=k1.shape[0] // 2))
    if isinstance(img, MultibandImage):
        return MultibandImage(np.clip(out.numpy(), 0.0, 1.0), img.kind)
    return out


def _gaussian_window() -> torch.Tensor:
    t = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    k = np.exp(-0.5 * (t / SSIM_SIGMA) ** 2)
    k /= k.sum()
    k2 = np.outer(k, k)
    return torch.from_numpy(k2)


def ssim(a, b):
    """Mean structural similarity, 11x11 Gaussian window, valid interior only."""
    x = _as_hwc(a)
    y = _as_hwc(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"inputs must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    window = _gaussian_window()
    xb, yb = _nchw(x), _nchw(y)

    def smooth(t):
        return _depthwise(t, window, pad=0)

    mu_x = smooth(xb)
    mu_y = smooth(yb)
    sigma_x = smooth(xb * xb) - mu_x * mu_x
    sigma_y = smooth(yb * yb) - mu_y * mu_y
    sigma_xy = smooth(xb * yb) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return (num / den).mean()


def loss_reduced(fms, reference) -> torch.Tensor:
    """Mean absolute error against a reference image."""
    x = _as_hwc(fms)
    y = _as_hwc(reference)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return (x - y).abs().mean()


def loss_spatial(pan, fms) -> torch.Tensor:
    """High-pass L1 plus high-pass SSIM gap between PAN and the FMS intensity."""
    p = _as_hwc(pan)
    f = _as_hwc(fms)
    if p.shape[:2] != f.shape[:2]:
        raise ValueError(f"spatial dims differ: {tuple(p.shape[:2])} vs {tuple(f.shape[:2])}")
    intensity = f.mean(dim=2, keepdim=True)
    hp_pan = get_hp(p)
    hp_int = get_hp(intensity)
    return (hp_pan - hp_int).abs().mean() + (1.0 - ssim(hp_pan, hp_int))


def loss_spectral(ms_up, fms, ratio: int) -> torch.Tensor:
    """L1 plus SSIM gap between upsampled MS and the blurred fusion result."""
    m = _as_hwc(ms_up)
    f = _as_hwc(fms)
    if m.shape != f.shape:
        raise ValueError(f"shape mismatch: {tuple(m.shape)} vs {tuple(f.shape)}")
    gs = gaussian_blur(f, ratio)
    return (m - gs).abs().mean() + (1.0 - ssim(m, gs))


def _block_stats(x: torch.Tensor, block: int):
    """Per-block mean and centered values for non-overlapping blocks."""
    h, w = x.shape
    nh, nw = h // block, w // block
    if nh < 1 or nw < 1:
        raise ValueError(f"dims {h}x{w} smaller than block {block}")
    x = x[:nh * block, :nw * block]
    tiles = x.reshape(nh, block, nw, block).permute(0, 2, 1, 3).reshape(nh * nw, -1)
    mu = tiles.mean(dim=1)
    centered = tiles - mu[:, None]
    return mu, centered


def _block_q(x: torch.Tensor, y: torch.Tensor, block: int) -> torch.Tensor:
    """Mean universal quality index over non-overlapping blocks.

    Degenerate blocks (zero denominator) contribute 0.
    """
    mx, cx = _block_stats(x, block)
    my, cy = _block_stats(y, block)
    vx = (cx * cx).mean(dim=1)
    vy = (cy * cy).mean(dim=1)
    cov = (cx * cy).mean(dim=1)
    den1 = vx + vy
    den2 = mx * mx + my * my
    safe1 = torch.where(den1 == 0, torch.ones_like(den1), den1)
    safe2 = torch.where(den2 == 0, torch.ones_like(den2), den2)
    corr = torch.where(den1 == 0, torch.zeros_like(cov), 2.0 * cov / safe1)
    lum = torch.where(den2 == 0, torch.zeros_like(den2), 2.0 * mx * my / safe2)
    return (corr * lum).mean()


def _d_lambda_t(fms: torch.Tensor, ms: torch.Tensor, block: int) -> torch.Tensor:
    bands = fms.shape[2]
    if bands < 2:
        raise ValueError("spectral distortion needs at least 2 bands")
    diffs = []
    for i in range(bands):
        for j in range(bands):
            if i == j:
                continue
            q_f = _block_q(fms[:, :, i], fms[:, :, j], block)
            q_m = _block_q(ms[:, :, i], ms[:, :, j], block)
            diffs.append((q_f - q_m).abs())
    return torch.stack(diffs).mean()


def _d_s_t(fms: torch.Tensor, ms: torch.Tensor, pan: torch.Tensor,
           pan_lr: torch.Tensor, block: int) -> torch.Tensor:
    diffs = []
    for i in range(fms.shape[2]):
        q_hi = _block_q(fms[:, :, i], pan[:, :, 0], block)
        q_lo = _block_q(ms[:, :, i], pan_lr[:, :, 0], block)
        diffs.append((q_hi - q_lo).abs())
    return torch.stack(diffs).mean()


def loss_qnr(ms, pan, fms, ratio: int, block: int = 32) -> torch.Tensor:
    """1 - QNR(M, P, FMS), evaluated on the gradient-capable path.

    Gradients flow through ``fms``; the low-resolution PAN is a constant
    derived with the shared degradation formula.
    """
    m = _as_hwc(ms)
    p = _as_hwc(pan)
    f = _as_hwc(fms)
    if f.shape[:2] != p.shape[:2]:
        raise ValueError("fms and pan spatial dims must match")
    if (f.shape[0] != m.shape[0] * ratio or f.shape[1] != m.shape[1] * ratio
            or f.shape[2] != m.shape[2]):
        raise ValueError("ms dims must be fms dims / ratio with equal band count")
    pan_lr = torch.from_numpy(lowres_pan(p.detach().numpy(), ratio))
    d_lam = _d_lambda_t(f, m, block)
    d_s = _d_s_t(f, m, p, pan_lr, block)
    return 1.0 - (1.0 - d_lam) * (1.0 - d_s)


@dataclass(frozen=True)
class LossReport:
    """Composite full-resolution loss and its terms (0-dim double tensors)."""

    total: torch.Tensor
    spa: torch.Tensor
    spe: torch.Tensor
    qnr_term: torch.Tensor
    lam: float

    def scalars(self) -> dict[str, float]:
        return {"total": float(self.total), "spa": float(self.spa),
                "spe": float(self.spe), "qnr_term": float(self.qnr_term),
                "lambda": self.lam}


def loss_full(ms, pan, fms, ratio: int, lam: float = 0.01,
              block: int = 32) -> LossReport:
    """Unsupervised full-resolution loss: L_QNR + lambda * (L_spa + L_spe)."""
    ms_up_t = _as_hwc(_ms_up_for(ms, ratio))
    spa = loss_spatial(pan, fms)
    spe = loss_spectral(ms_up_t, fms, ratio)
    qnr_term = loss_qnr(ms, pan, fms, ratio, block)
    total = qnr_term + lam * (spa + spe)
    return LossReport(total=total, spa=spa, spe=spe, qnr_term=qnr_term, lam=lam)


def _ms_up_for(ms, ratio: int):
    if isinstance(ms, MultibandImage):
        return upsample(ms, ratio)
    raw = ms.detach().numpy() if isinstance(ms, torch.Tensor) else np.asarray(ms)
    return np.clip(upsample_array(raw, ratio), 0.0, 1.0)
