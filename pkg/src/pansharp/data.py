"""Dataset construction: raster I/O, Wald-protocol degradation, tiling, and
synthetic scenes with known high-resolution ground truth.

Raster container layout, all integers little-endian:

    bytes 0..7    magic ``PSRASTR1``
    bytes 8..11   format version (u32)
    bytes 12..15  width (u32)
    bytes 16..19  height (u32)
    bytes 20..23  bands (u32)
    bytes 24..27  element type code (u32); 1 = float32 little-endian
    bytes 28..35  declared dynamic range (f64); 1.0 for normalized data
    payload       height * width * bands float32 values, row-major,
                  band-interleaved by pixel

Dataset directory layout: ``<root>/<split>/<index>_pan.raster`` plus
``<index>_ms.raster`` and an optional ``<index>_ref.raster`` reference.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import CorruptionError, FormatError
from .image import ImagePair, Kind, MultibandImage, downsample, upsample_array

RASTER_MAGIC = b"PSRASTR1"
RASTER_VERSION = 1
ELEMENT_F32LE = 1


def write_raster(img: MultibandImage, path) -> None:
    """Write an image to the bit-exact raster container."""
    h, w, c = img.data.shape
    header = (RASTER_MAGIC
              + RASTER_VERSION.to_bytes(4, "little")
              + w.to_bytes(4, "little")
              + h.to_bytes(4, "little")
              + c.to_bytes(4, "little")
              + ELEMENT_F32LE.to_bytes(4, "little")
              + np.float64(1.0).tobytes())
    payload = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_raster(path, kind: Kind | None = None) -> MultibandImage:
    """Read a raster container; kind defaults to PAN for 1 band, MS otherwise."""
    raw = Path(path).read_bytes()
    if len(raw) < 36:
        raise CorruptionError(f"{path}: file too short for a raster header")
    if raw[:8] != RASTER_MAGIC:
        raise FormatError(f"{path}: bad magic bytes {raw[:8]!r}")
    version = int.from_bytes(raw[8:12], "little")
    if version != RASTER_VERSION:
        raise FormatError(f"{path}: unsupported raster version {version}")
    w = int.from_bytes(raw[12:16], "little")
    h = int.from_bytes(raw[16:20], "little")
    c = int.from_bytes(raw[20:24], "little")
    elem = int.from_bytes(raw[24:28], "little")
    if elem != ELEMENT_F32LE:
        raise FormatError(f"{path}: unsupported element type code {elem}")
    expected = h * w * c * 4
    if len(raw) - 36 != expected:
        raise CorruptionError(f"{path}: payload is {len(raw) - 36} bytes, expected {expected}")
    data = np.frombuffer(raw[36:], dtype="<f4").reshape(h, w, c)
    if kind is None:
        kind = Kind.PAN if c == 1 else Kind.MS
    return MultibandImage(data, kind)


def export_png(img: MultibandImage, path) -> None:
    """8-bit PNG preview: bands (3, 2, 1) as RGB when available, else grayscale.

    Display-only; applies a per-image 2-98 percentile stretch.
    """
    data = img.data.astype(np.float64)
    if img.bands >= 3:
        view = data[:, :, [2, 1, 0]]
    else:
        view = data[:, :, :1]
    lo, hi = np.percentile(view, [2.0, 98.0])
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.clip((view - lo) / (hi - lo), 0.0, 1.0)
    out = (scaled * 255.0 + 0.5).astype(np.uint8)
    if out.shape[2] == 1:
        PILImage.fromarray(out[:, :, 0], mode="L").save(path)
    else:
        PILImage.fromarray(out, mode="RGB").save(path)


@dataclass(frozen=True)
class SyntheticScene:
    """Ground-truth HRMS plus the PAN / MS pair derived from it."""

    hrms: MultibandImage
    pan: MultibandImage
    ms: MultibandImage
    ratio: int
    spectral_weights: np.ndarray

    @property
    def pair(self) -> ImagePair:
        return ImagePair(pan=self.pan, ms=self.ms, ratio=self.ratio)


def pan_from_hrms(hrms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Reference recipe for the synthetic PAN: weighted band sum in float64."""
    return np.tensordot(hrms.astype(np.float64), weights, axes=([2], [0]))[:, :, None]


def make_synthetic_scene(seed: int, height: int, width: int, bands: int,
                         ratio: int, min_divisor: int = 4) -> SyntheticScene:
    """Seeded synthetic scene: low-frequency fields plus crisp random shapes.

    The HRMS mixes smooth gradients with rectangles, ellipses, and half-plane
    edges so both smooth regions and high-frequency detail are present.
    """
    if height % ratio or width % ratio:
        raise ValueError(f"dims {height}x{width} must be divisible by ratio {ratio}")
    if height % min_divisor or width % min_divisor:
        raise ValueError(f"dims {height}x{width} must be divisible by {min_divisor}")
    rng = np.random.default_rng(seed)

    cell = 4
    while cell < 16 and height % (cell * 2) == 0 and width % (cell * 2) == 0:
        cell *= 2
    coarse = rng.random((height // cell, width // cell, bands))
    hrms = upsample_array(coarse, cell)

    yy, xx = np.mgrid[0:height, 0:width]
    n_rect = 6
    n_ellipse = 4
    n_edge = 2
    for _ in range(n_rect):
        y0 = rng.integers(0, height - 2)
        x0 = rng.integers(0, width - 2)
        y1 = rng.integers(y0 + 2, min(height, y0 + max(3, height // 2)) + 1)
        x1 = rng.integers(x0 + 2, min(width, x0 + max(3, width // 2)) + 1)
        color = rng.random(bands)
        hrms[y0:y1, x0:x1] = color
    for _ in range(n_ellipse):
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        ry = rng.uniform(height / 16, height / 4)
        rx = rng.uniform(width / 16, width / 4)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        color = rng.random(bands)
        hrms[mask] = color
    for _ in range(n_edge):
        theta = rng.uniform(0, np.pi)
        c = rng.uniform(0.25, 0.75) * (height * np.sin(theta) + width * np.cos(theta))
        mask = yy * np.sin(theta) + xx * np.cos(theta) >= c
        shift = rng.uniform(-0.3, 0.3, size=bands)
        hrms[mask] = hrms[mask] + shift

    lo, hi = hrms.min(), hrms.max()
    hrms = 0.02 + (hrms - lo) / (hi - lo) * 0.96

    weights = rng.gamma(shape=2.0, size=bands)
    weights = weights / weights.sum()

    hrms_img = MultibandImage(hrms, Kind.MS)
    pan_img = MultibandImage(pan_from_hrms(hrms_img.data, weights), Kind.PAN)
    ms_img = downsample(hrms_img, ratio)
    return SyntheticScene(hrms=hrms_img, pan=pan_img, ms=ms_img,
                          ratio=ratio, spectral_weights=weights)


def wald_degrade(pair: ImagePair) -> tuple[ImagePair, MultibandImage]:
    """Degrade both inputs by the pair's ratio; the original MS is the reference."""
    r = pair.ratio
    if pair.ms.height % r or pair.ms.width % r:
        raise ValueError(f"MS dims {pair.ms.height}x{pair.ms.width} not divisible by {r}")
    reduced = ImagePair(pan=downsample(pair.pan, r), ms=downsample(pair.ms, r), ratio=r)
    return reduced, pair.ms


def _crop(img: MultibandImage, y: int, x: int, size: int) -> MultibandImage:
    return MultibandImage(img.data[y:y + size, x:x + size], img.kind)


def tile(pair: ImagePair, pan_tile: int, stride: int) -> list[ImagePair]:
    """Aligned PAN/MS tile pairs on a regular grid; partial border tiles drop."""
    r = pair.ratio
    if pan_tile < 1 or stride < 1:
        raise ValueError("tile and stride must be positive")
    if pan_tile % r or stride % r:
        raise ValueError(f"tile {pan_tile} and stride {stride} must be divisible by ratio {r}")
    if pan_tile > pair.pan.height or pan_tile > pair.pan.width:
        raise ValueError(f"tile {pan_tile} exceeds PAN dims "
                         f"{pair.pan.height}x{pair.pan.width}")
    out = []
    for y in range(0, pair.pan.height - pan_tile + 1, stride):
        for x in range(0, pair.pan.width - pan_tile + 1, stride):
            out.append(ImagePair(
                pan=_crop(pair.pan, y, x, pan_tile),
                ms=_crop(pair.ms, y // r, x // r, pan_tile // r),
                ratio=r))
    return out


@dataclass(frozen=True)
class DatasetItem:
    index: int
    pair: ImagePair
    reference: MultibandImage | None = None


def save_scene(root, split: str, index: int, pair: ImagePair,
               reference: MultibandImage | None = None) -> None:
    """Write one pair (and optional reference) into the dataset layout."""
    folder = Path(root) / split
    folder.mkdir(parents=True, exist_ok=True)
    write_raster(pair.pan, folder / f"{index}_pan.raster")
    write_raster(pair.ms, folder / f"{index}_ms.raster")
    if reference is not None:
        write_raster(reference, folder / f"{index}_ref.raster")


def load_dataset(root, split: str) -> list[DatasetItem]:
    """Load every indexed pair of a split, sorted by index."""
    folder = Path(root) / split
    if not folder.is_dir():
        raise FileNotFoundError(f"dataset split directory not found: {folder}")
    items = []
    for pan_path in sorted(folder.glob("*_pan.raster")):
        m = re.fullmatch(r"(\d+)_pan\.raster", pan_path.name)
        if not m:
            continue
        index = int(m.group(1))
        pan = read_raster(pan_path, Kind.PAN)
        ms = read_raster(folder / f"{index}_ms.raster", Kind.MS)
        if pan.height % ms.height or pan.width % ms.width:
            raise ValueError(f"{pan_path}: PAN dims are not a multiple of MS dims")
        ratio = pan.height // ms.height
        ref_path = folder / f"{index}_ref.raster"
        reference = read_raster(ref_path, Kind.MS) if ref_path.exists() else None
        items.append(DatasetItem(index=index, pair=ImagePair(pan=pan, ms=ms, ratio=ratio),
                                 reference=reference))
    items.sort(key=lambda it: it.index)
    if not items:
        raise FileNotFoundError(f"no pairs found under {folder}")
    return items
