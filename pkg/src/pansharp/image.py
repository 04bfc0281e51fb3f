"""Core image types and resampling operators.

Images are channel-last float32 arrays holding normalized reflectance in
[0, 1]; diffusion noise states are exempt from the range constraint. All
operations here are pure functions on immutable inputs and are safe to call
concurrently.

Boundary handling everywhere is mirror reflection without edge repetition
(the ``np.pad(mode="reflect")`` convention), so a row ``a b c d`` extends to
``c b | a b c d | c b``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class Kind(enum.Enum):
    PAN = "PAN"
    MS = "MS"
    MS_UP = "MS_UP"
    FUSED = "FUSED"
    NOISE_STATE = "NOISE_STATE"


@dataclass(frozen=True)
class MultibandImage:
    """A height x width x bands raster of normalized reflectance values.

    The backing array is converted to float32 and marked read-only.
    NOISE_STATE images carry unbounded diffusion states; every other kind
    must stay within [0, 1].
    """

    data: np.ndarray
    kind: Kind = Kind.MS

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"image data must be rank 3 (H, W, C), got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1 or c < 1:
            raise ValueError(f"image dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if self.kind is Kind.PAN and c != 1:
            raise ValueError(f"PAN images must have exactly 1 band, got {c}")
        if self.kind is not Kind.NOISE_STATE:
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{self.kind.value} image values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ImagePair:
    """An aligned PAN / MS acquisition at spatial resolution ratio ``ratio``."""

    pan: MultibandImage
    ms: MultibandImage
    ratio: int = 4

    def __post_init__(self):
        if self.pan.kind is not Kind.PAN:
            raise ValueError("pair.pan must be a PAN-kind image")
        if self.ms.kind is not Kind.MS:
            raise ValueError("pair.ms must be an MS-kind image")
        if self.ratio not in (2, 4, 8):
            raise ValueError(f"ratio must be one of 2, 4, 8, got {self.ratio}")
        if (self.pan.height != self.ratio * self.ms.height
                or self.pan.width != self.ratio * self.ms.width):
            raise ValueError(
                f"PAN dims {self.pan.height}x{self.pan.width} must be "
                f"{self.ratio}x the MS dims {self.ms.height}x{self.ms.width}")


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map out-of-range indices into [0, n) by mirror reflection (no edge repeat)."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    j = np.abs(idx) % period
    return np.where(j >= n, period - j, j)


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Catmull-Rom cubic interpolation kernel (a = -0.5)."""
    x = np.abs(x)
    out = np.zeros_like(x)
    m1 = x <= 1.0
    m2 = (x > 1.0) & (x < 2.0)
    out[m1] = (a + 2.0) * x[m1] ** 3 - (a + 3.0) * x[m1] ** 2 + 1.0
    out[m2] = a * x[m2] ** 3 - 5.0 * a * x[m2] ** 2 + 8.0 * a * x[m2] - 4.0 * a
    return out


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _upsample_axis(arr: np.ndarray, factor: int, axis: int) -> np.ndarray:
    """Cubic interpolation along one axis with center-aligned sampling."""
    n = arr.shape[axis]
    coords = (np.arange(n * factor, dtype=np.float64) + 0.5) / factor - 0.5
    base = np.floor(coords).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    weights = cubic_kernel(coords[:, None] - taps)
    taps = reflect_index(taps, n)
    moved = np.moveaxis(arr, axis, 0)
    gathered = moved[taps]                       # (out, 4, ...)
    out = np.einsum("ot,ot...->o...", weights, gathered)
    return np.moveaxis(out, 0, axis)


def _out_kind(kind: Kind) -> Kind:
    return Kind.MS_UP if kind is Kind.MS else kind


def upsample(img: MultibandImage, factor: int) -> MultibandImage:
    """Bicubic upsampling by an integer factor.

    MS inputs come back tagged MS_UP; all other kinds are preserved. Outputs
    of bounded kinds are clipped to [0, 1] since the cubic kernel overshoots.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return img
    out = _upsample_axis(img.data.astype(np.float64), factor, axis=0)
    out = _upsample_axis(out, factor, axis=1)
    kind = _out_kind(img.kind)
    if kind is not Kind.NOISE_STATE:
        out = np.clip(out, 0.0, 1.0)
    return MultibandImage(out, kind)


def upsample_array(data: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic upsampling of a raw (H, W, C) float array, no clipping."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return np.asarray(data, dtype=np.float64)
    out = _upsample_axis(np.asarray(data, dtype=np.float64), factor, axis=0)
    return _upsample_axis(out, factor, axis=1)


def gaussian_blur_array(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a raw (H, W, C) array, reflect boundary."""
    k = gaussian_kernel_1d(sigma)
    out = np.asarray(data, dtype=np.float64)
    # scipy's "mirror" mode matches np.pad(mode="reflect")
    out = ndimage.correlate1d(out, k, axis=0, mode="mirror")
    out = ndimage.correlate1d(out, k, axis=1, mode="mirror")
    return out


def downsample(img: MultibandImage, factor: int) -> MultibandImage:
    """Gaussian anti-alias blur (sigma = factor/2) followed by decimation.

    Dimensions must be divisible by the factor; factor 1 returns the image
    unchanged (no blur).
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return img
    h, w = img.height, img.width
    if h % factor or w % factor:
        raise ValueError(f"dims {h}x{w} not divisible by factor {factor}")
    blurred = gaussian_blur_array(img.data, sigma=factor / 2.0)
    out = blurred[::factor, ::factor]
    if img.kind is not Kind.NOISE_STATE:
        out = np.clip(out, 0.0, 1.0)
    return MultibandImage(out, img.kind)


def channel_mean(img: MultibandImage) -> MultibandImage:
    """Arithmetic mean across bands, returned as a single-band image."""
    out = img.data.astype(np.float64).mean(axis=2, keepdims=True)
    kind = Kind.NOISE_STATE if img.kind is Kind.NOISE_STATE else Kind.PAN
    return MultibandImage(out, kind)
