"""Full- and reduced-resolution quality assessment.

This is the numpy evaluation path; the differentiable twin of the QNR
computation lives in :mod:`pansharp.losses` and the two are held to agree
to 1e-10. Q-family indices use non-overlapping blocks (partial border
blocks are dropped) and degenerate blocks contribute 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError
from .image import ImagePair, MultibandImage, gaussian_blur_array

MODE_FULL = "FULL_RES"
MODE_REDUCED = "REDUCED_RES"

FULL_METRICS = ("D_lambda", "D_s", "HQNR", "QNR")
REDUCED_METRICS = ("Q2n", "SAM", "ERGAS", "SCC")

LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                      [1.0, -4.0, 1.0],
                      [0.0, 1.0, 0.0]])


def _as_np(x) -> np.ndarray:
    """Channel-last float64 array from an image, array, or tensor."""
    if isinstance(x, MultibandImage):
        x = x.data
    elif hasattr(x, "detach"):
        x = x.detach().numpy()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected a rank-3 (H, W, C) input, got shape {arr.shape}")
    return arr


def _degrade(arr: np.ndarray, ratio: int) -> np.ndarray:
    """Gaussian blur (sigma = ratio/2) and decimation, clipped to [0, 1]."""
    blurred = gaussian_blur_array(arr, sigma=ratio / 2.0)
    return np.clip(blurred[::ratio, ::ratio], 0.0, 1.0)


def lowres_pan(pan: np.ndarray, ratio: int) -> np.ndarray:
    """Shared low-resolution PAN used by both QNR evaluation paths."""
    return _degrade(np.asarray(pan, dtype=np.float64), ratio)


def _blocks(x: np.ndarray, block: int) -> np.ndarray:
    """(n_blocks, block*block) view of non-overlapping blocks of a 2-D array."""
    h, w = x.shape
    nh, nw = h // block, w // block
    if nh < 1 or nw < 1:
        raise ValueError(f"dims {h}x{w} smaller than block {block}")
    x = x[:nh * block, :nw * block]
    return (x.reshape(nh, block, nw, block)
             .transpose(0, 2, 1, 3)
             .reshape(nh * nw, block * block))


def _block_q(x: np.ndarray, y: np.ndarray, block: int) -> float:
    # Q = (2 cov / (vx + vy)) * (2 mx my / (mx^2 + my^2)); the factored form
    # makes self-comparison exactly 1 since cov == vx == vy bitwise there.
    bx = _blocks(x, block)
    by = _blocks(y, block)
    mx = bx.mean(axis=1)
    my = by.mean(axis=1)
    cx = bx - mx[:, None]
    cy = by - my[:, None]
    vx = (cx * cx).mean(axis=1)
    vy = (cy * cy).mean(axis=1)
    cov = (cx * cy).mean(axis=1)
    den1 = vx + vy
    den2 = mx * mx + my * my
    corr = np.where(den1 == 0, 0.0, 2.0 * cov / np.where(den1 == 0, 1.0, den1))
    lum = np.where(den2 == 0, 0.0, 2.0 * mx * my / np.where(den2 == 0, 1.0, den2))
    return float((corr * lum).mean())


def uiqi(a, b, block: int = 32) -> float:
    """Universal image quality index on a single-band pair."""
    x = _as_np(a)
    y = _as_np(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.shape[2] != 1:
        raise ValueError(f"uiqi expects single-band inputs, got {x.shape[2]} bands")
    return _block_q(x[:, :, 0], y[:, :, 0], block)


def _cd_conj(v: np.ndarray) -> np.ndarray:
    out = v.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def _cd_mult(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cayley-Dickson hypercomplex product along the last axis."""
    c = a.shape[-1]
    if c == 1:
        return a * b
    h = c // 2
    a1, b1 = a[..., :h], a[..., h:]
    c1, d1 = b[..., :h], b[..., h:]
    left = _cd_mult(a1, c1) - _cd_mult(_cd_conj(d1), b1)
    right = _cd_mult(d1, a1) + _cd_mult(b1, _cd_conj(c1))
    return np.concatenate([left, right], axis=-1)


def _q2n_block(z1: np.ndarray, z2: np.ndarray) -> float:
    """Hypercomplex Q on one block of per-pixel band vectors (N, C).

    Variances are taken as the modulus of each input's hypercomplex
    self-covariance so that self-comparison is exactly 1.
    """
    mu1 = z1.mean(axis=0)
    mu2 = z2.mean(axis=0)
    c1 = z1 - mu1
    c2 = z2 - mu2
    cov12 = _cd_mult(c1, _cd_conj(c2)).mean(axis=0)
    var1 = float(np.sqrt((_cd_mult(c1, _cd_conj(c1)).mean(axis=0) ** 2).sum()))
    var2 = float(np.sqrt((_cd_mult(c2, _cd_conj(c2)).mean(axis=0) ** 2).sum()))
    m1 = float(np.sqrt((mu1 * mu1).sum()))
    m2 = float(np.sqrt((mu2 * mu2).sum()))
    den1 = var1 + var2
    den2 = m1 * m1 + m2 * m2
    corr = 2.0 * float(np.sqrt((cov12 * cov12).sum())) / den1 if den1 != 0 else 0.0
    lum = 2.0 * m1 * m2 / den2 if den2 != 0 else 0.0
    return corr * lum


def q2n(a, b, block: int = 32) -> float:
    """Hypercomplex generalization of the Q index for 2/4/8-band images.

    Bands are embedded as Cayley-Dickson numbers per pixel; a single-band
    input reduces exactly to :func:`uiqi`.
    """
    x = _as_np(a)
    y = _as_np(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    bands = x.shape[2]
    if bands not in (1, 2, 4, 8):
        raise ValueError(f"q2n supports 1, 2, 4 or 8 bands, got {bands}")
    if bands == 1:
        return uiqi(x, y, block)
    h, w = x.shape[:2]
    nh, nw = h // block, w // block
    if nh < 1 or nw < 1:
        raise ValueError(f"dims {h}x{w} smaller than block {block}")
    values = []
    for i in range(nh):
        for j in range(nw):
            sl = (slice(i * block, (i + 1) * block), slice(j * block, (j + 1) * block))
            values.append(_q2n_block(x[sl].reshape(-1, bands), y[sl].reshape(-1, bands)))
    return float(np.mean(values))


def sam(a, b) -> float:
    """Mean spectral angle in degrees; zero-vector pixels contribute 0."""
    x = _as_np(a)
    y = _as_np(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.shape[2] < 2:
        raise ValueError("sam needs at least 2 bands")
    dot = (x * y).sum(axis=2)
    sx = (x * x).sum(axis=2)
    sy = (y * y).sum(axis=2)
    denom = sx * sy
    valid = denom > 0
    # cos^2 = dot^2 / (|a|^2 |b|^2): for identical inputs numerator and
    # denominator are the same float expression, so the angle is exactly 0
    cos2 = np.clip(np.divide(dot * dot, denom, out=np.ones_like(dot), where=valid), 0.0, 1.0)
    cosv = np.sign(dot) * np.sqrt(cos2)
    angles = np.where(valid, np.degrees(np.arccos(cosv)), 0.0)
    return float(angles.mean())


def ergas(fused, reference, ratio: int) -> float:
    """Relative dimensionless global error: 100/ratio * RMS of per-band RMSE/mean."""
    f = _as_np(fused)
    r = _as_np(reference)
    if f.shape != r.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {r.shape}")
    mu = r.mean(axis=(0, 1))
    if np.any(mu == 0):
        raise DegenerateInputError("reference has a zero-mean band")
    rmse = np.sqrt(((f - r) ** 2).mean(axis=(0, 1)))
    return float(100.0 / ratio * np.sqrt(((rmse / mu) ** 2).mean()))


def _laplacian(x: np.ndarray) -> np.ndarray:
    return ndimage.correlate(x, LAPLACIAN, mode="mirror")


def scc(fused, pan) -> float:
    """Correlation of Laplacian details between each fused band and PAN.

    The second argument may be single-band (compared against every fused
    band) or carry the same band count (compared bandwise).
    """
    f = _as_np(fused)
    p = _as_np(pan)
    if f.shape[:2] != p.shape[:2]:
        raise ValueError(f"spatial dims differ: {f.shape[:2]} vs {p.shape[:2]}")
    if p.shape[2] not in (1, f.shape[2]):
        raise ValueError("second argument must be single-band or match the band count")
    corrs = []
    for i in range(f.shape[2]):
        hf = _laplacian(f[:, :, i]).ravel()
        hp = _laplacian(p[:, :, min(i, p.shape[2] - 1)]).ravel()
        hf = hf - hf.mean()
        hp = hp - hp.mean()
        num = (hf * hp).sum()
        denom = (hf * hf).sum() * (hp * hp).sum()
        if denom == 0:
            raise DegenerateInputError("constant input: zero variance after filtering")
        # sign(num) * sqrt(num^2 / denom) is exactly +-1 on (anti-)identical inputs
        corrs.append(float(np.sign(num) * np.sqrt(min(1.0, num * num / denom))))
    return float(np.mean(corrs))


def d_lambda(fms, ms, block: int = 32) -> float:
    """QNR-family spectral distortion from inter-band Q differences (p = 1)."""
    f = _as_np(fms)
    m = _as_np(ms)
    bands = f.shape[2]
    if bands < 2 or m.shape[2] != bands:
        raise ValueError("d_lambda needs matching band counts >= 2")
    diffs = []
    for i in range(bands):
        for j in range(bands):
            if i == j:
                continue
            q_f = _block_q(f[:, :, i], f[:, :, j], block)
            q_m = _block_q(m[:, :, i], m[:, :, j], block)
            diffs.append(abs(q_f - q_m))
    return float(np.mean(diffs))


def d_s(fms, ms, pan, ratio: int, block: int = 32) -> float:
    """QNR-family spatial distortion against PAN at both scales (q = 1)."""
    f = _as_np(fms)
    m = _as_np(ms)
    p = _as_np(pan)
    if f.shape[:2] != p.shape[:2]:
        raise ValueError("fms and pan spatial dims must match")
    if (f.shape[0] != m.shape[0] * ratio or f.shape[1] != m.shape[1] * ratio
            or f.shape[2] != m.shape[2]):
        raise ValueError("ms dims must be fms dims / ratio with equal band count")
    p_lr = lowres_pan(p, ratio)
    diffs = []
    for i in range(f.shape[2]):
        q_hi = _block_q(f[:, :, i], p[:, :, 0], block)
        q_lo = _block_q(m[:, :, i], p_lr[:, :, 0], block)
        diffs.append(abs(q_hi - q_lo))
    return float(np.mean(diffs))


def qnr(ms, pan, fms, ratio: int, block: int = 32) -> float:
    """No-reference quality: (1 - D_lambda) * (1 - D_s), ideal value 1."""
    return (1.0 - d_lambda(fms, ms, block)) * (1.0 - d_s(fms, ms, pan, ratio, block))


def d_lambda_khan(fms, ms, ratio: int, block: int = 32) -> float:
    """Khan's protocol spectral distortion: 1 - Q2n(degraded FMS, MS)."""
    f = _as_np(fms)
    return 1.0 - q2n(_degrade(f, ratio), _as_np(ms), block)


def hqnr(ms, pan, fms, ratio: int, block: int = 32) -> float:
    """Hybrid no-reference quality: (1 - D_lambda^Khan) * (1 - D_s)."""
    return (1.0 - d_lambda_khan(fms, ms, ratio, block)) * (1.0 - d_s(fms, ms, pan, ratio, block))


@dataclass(frozen=True)
class QualityReport:
    """Per-metric mean and standard deviation over the evaluated tiles."""

    mode: str
    values: dict[str, tuple[float, float]]

    def __post_init__(self):
        expected = FULL_METRICS if self.mode == MODE_FULL else REDUCED_METRICS
        if tuple(self.values.keys()) != expected:
            raise ValueError(f"{self.mode} report must carry exactly {expected}")

    def to_text(self) -> str:
        lines = [f"{name} {mean:.10g} {std:.10g}" for name, (mean, std) in self.values.items()]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "mode": self.mode,
            "metrics": {name: {"mean": mean, "std": std}
                        for name, (mean, std) in self.values.items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def evaluate(items: Sequence[tuple], mode: str, block: int = 32) -> QualityReport:
    """Aggregate per-tile metrics to mean and standard deviation.

    Each item is ``(pair, fms)`` for FULL_RES or ``(pair, fms, reference)``
    for REDUCED_RES.
    """
    if mode not in (MODE_FULL, MODE_REDUCED):
        raise ValueError(f"mode must be {MODE_FULL} or {MODE_REDUCED}")
    if not items:
        raise ValueError("no tiles to evaluate")
    rows: list[dict[str, float]] = []
    for item in items:
        pair: ImagePair = item[0]
        fms = item[1]
        if mode == MODE_FULL:
            dl = d_lambda(fms, pair.ms, block)
            ds = d_s(fms, pair.ms, pair.pan, pair.ratio, block)
            rows.append({
                "D_lambda": dl,
                "D_s": ds,
                "HQNR": hqnr(pair.ms, pair.pan, fms, pair.ratio, block),
                "QNR": (1.0 - dl) * (1.0 - ds),
            })
        else:
            reference = item[2] if len(item) > 2 else None
            if reference is None:
                raise ValueError("REDUCED_RES evaluation requires reference images")
            rows.append({
                "Q2n": q2n(fms, reference, block),
                "SAM": sam(fms, reference),
                "ERGAS": ergas(fms, reference, pair.ratio),
                "SCC": scc(fms, reference),
            })
    names = FULL_METRICS if mode == MODE_FULL else REDUCED_METRICS
    values = {}
    for name in names:
        samples = np.array([row[name] for row in rows], dtype=np.float64)
        values[name] = (float(samples.mean()), float(samples.std()))
    return QualityReport(mode=mode, values=values)
