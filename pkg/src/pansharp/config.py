"""Run configuration: one YAML document drives every CLI command.

Unknown sections or keys are rejected; dotted CLI overrides like
``--adapt.epochs=5`` replace individual keys. The fully-resolved config is
echoed into each command's output directory for reproducibility.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml


@dataclass
class DataSection:
    root: str = "data"
    split: str = "train"
    ratio: int = 4
    tile: int = 64
    stride: int = 64
    synth_seed: int = 0
    synth_count: int = 8
    synth_height: int = 128
    synth_width: int = 128
    synth_bands: int = 4


@dataclass
class ScheduleSection:
    horizon: int = 1000
    offset: float = 0.008


@dataclass
class PredictorSection:
    base_channels: int = 32
    channel_mults: list = field(default_factory=lambda: [1, 2, 4])
    res_blocks_per_level: int = 2
    time_embed_dim: int = 128
    norm_groups: int = 8


@dataclass
class PretrainSection:
    epochs: int = 1000
    batch_size: int = 32
    learning_rate: float = 3e-4
    seed: int = 0
    objective: str = "NOISE"


@dataclass
class AdaptSection:
    feature_step: int = 50
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-4
    lam: float = 0.01
    mode: str = "FULL_RES"
    attention_enabled: bool = True
    seed: int = 0
    inference_seed: int = 0


@dataclass
class EvalSection:
    mode: str = "FULL_RES"
    block: int = 32


@dataclass
class PathsSection:
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)


# YAML key "lambda" maps onto the python-safe attribute "lam"
_KEY_ALIASES = {("adapt", "lambda"): "lam"}
_ALIAS_BACK = {("adapt", "lam"): "lambda"}

_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}


class ConfigError(ValueError):
    """Invalid configuration document or override."""


def _coerce(section: str, key: str, value, current):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{section}.{key}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
    if isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    if isinstance(current, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
    if isinstance(current, list):
        if isinstance(value, list):
            return value
        raise ConfigError(f"{section}.{key}: expected a list, got {value!r}")
    return value


def _apply(cfg: RunConfig, section: str, key: str, value) -> None:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    target = getattr(cfg, section)
    attr = _KEY_ALIASES.get((section, key), key)
    if not hasattr(target, attr):
        raise ConfigError(f"unknown config key {section}.{key}")
    setattr(target, attr, _coerce(section, key, value, getattr(target, attr)))


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Parse a YAML config file plus dotted-key overrides, strictly."""
    cfg = RunConfig()
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"config root must be a mapping, got {type(doc).__name__}")
        for section, body in doc.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            if body is None:
                continue
            if not isinstance(body, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            for key, value in body.items():
                _apply(cfg, section, key, value)
    for override in overrides or []:
        item = override[2:] if override.startswith("--") else override
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"overrides look like --section.key=value, got {override!r}")
        dotted, raw_value = item.split("=", 1)
        section, _, key = dotted.partition(".")
        try:
            value = yaml.safe_load(raw_value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw_value!r}") from exc
        _apply(cfg, section, key, value)
    return cfg


def resolved_dict(cfg: RunConfig) -> dict:
    out = {}
    for section in _SECTIONS:
        body = dataclasses.asdict(getattr(cfg, section))
        out[section] = {_ALIAS_BACK.get((section, k), k): v for k, v in body.items()}
    return out


def write_resolved(cfg: RunConfig, directory) -> None:
    """Echo the fully-resolved config into a run directory."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "config.resolved.yaml", "w") as fh:
        yaml.safe_dump(resolved_dict(cfg), fh, sort_keys=True)
