"""Single-file checkpoint container for predictors and fusion heads.

Layout, all integers little-endian:

    bytes 0..7    magic ``PSCHKPT1``
    bytes 8..11   container version (u32)
    bytes 12..19  manifest length in bytes (u64)
    manifest      UTF-8 JSON object
    data block    raw little-endian arrays

The manifest's ``arrays`` list declares, per tensor: name, dtype (numpy
string like ``<f4``), shape, and byte offset *relative to the start of the
data block* (the first byte after the manifest). Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptionError, FormatError
from .predictor import NoisePredictor, PredictorConfig

MAGIC = b"PSCHKPT1"
VERSION = 1

ROLE_FUSION_HEAD = "FUSION_HEAD"


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a container with the given manifest metadata and named arrays."""
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.newbyteorder("<").str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = dict(meta)
    manifest["arrays"] = entries
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(payload).to_bytes(8, "little"))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back into (manifest, {name: array})."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12:
        raise CorruptionError(f"{path}: file too short for a container header")
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {raw[:8]!r}")
    version = int.from_bytes(raw[8:12], "little")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    mlen = int.from_bytes(raw[12:20], "little")
    mstart, mend = 20, 20 + mlen
    if len(raw) < mend:
        raise CorruptionError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[mstart:mend].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable manifest") from exc
    arrays: dict[str, np.ndarray] = {}
    data = raw[mend:]
    for entry in manifest.get("arrays", []):
        name = entry["name"]
        if name in arrays:
            raise CorruptionError(f"{path}: duplicate array {name!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        if nbytes != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise CorruptionError(f"{path}: array {name!r} declares inconsistent size")
        if start + nbytes > len(data):
            raise CorruptionError(f"{path}: array {name!r} extends past end of file")
        arrays[name] = np.frombuffer(data[start:start + nbytes], dtype=dtype).reshape(shape).copy()
    return manifest, arrays


def _state_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: tensor.detach().numpy() for name, tensor in module.state_dict().items()}


def _load_state(module: torch.nn.Module, arrays: dict[str, np.ndarray], path) -> None:
    expected = set(module.state_dict().keys())
    got = set(arrays.keys())
    if expected != got:
        missing, extra = sorted(expected - got), sorted(got - expected)
        raise CorruptionError(f"{path}: parameter mismatch (missing {missing}, extra {extra})")
    with torch.no_grad():
        for name, param in module.named_parameters():
            param.data = torch.from_numpy(arrays[name]).clone()


def save_checkpoint(predictor: NoisePredictor, path, *, train_config=None,
                    epoch: int = 0, schedule_offset: float = 0.008) -> None:
    """Persist a predictor's parameters plus training metadata."""
    cfg = predictor.config
    meta = {
        "format_version": VERSION,
        "role": predictor.role,
        "config": {
            "in_bands": cfg.in_bands,
            "cond_bands": cfg.cond_bands,
            "base_channels": cfg.base_channels,
            "channel_mults": list(cfg.channel_mults),
            "res_blocks_per_level": cfg.res_blocks_per_level,
            "time_embed_dim": cfg.time_embed_dim,
            "norm_groups": cfg.norm_groups,
        },
        "train": dict(train_config) if train_config else None,
        "epoch": epoch,
        "schedule_offset": schedule_offset,
    }
    write_container(path, meta, _state_arrays(predictor))


def load_checkpoint(path) -> NoisePredictor:
    """Rebuild a predictor with bit-identical parameters from a container."""
    meta, arrays = read_container(path)
    role = meta.get("role")
    if role == ROLE_FUSION_HEAD:
        raise FormatError(f"{path}: holds a fusion head, not a predictor")
    cfg_raw = meta["config"]
    config = PredictorConfig(
        in_bands=cfg_raw["in_bands"],
        cond_bands=cfg_raw["cond_bands"],
        base_channels=cfg_raw["base_channels"],
        channel_mults=tuple(cfg_raw["channel_mults"]),
        res_blocks_per_level=cfg_raw["res_blocks_per_level"],
        time_embed_dim=cfg_raw["time_embed_dim"],
        norm_groups=cfg_raw["norm_groups"],
    )
    model = NoisePredictor(config, role)
    _load_state(model, arrays, path)
    return model
