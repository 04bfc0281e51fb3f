"""Command-line entry point wiring the full pipeline into reproducible runs.

Commands: makedata, pretrain, adapt, fuse, sample, eval. Every command is
driven by one YAML config (plus dotted-key overrides) and depends only on
files named there, so commands compose statelessly. Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import data as dp
from . import fusion, metrics, pretrain as pt
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, write_resolved
from .image import upsample
from .predictor import PredictorConfig
from .schedule import make_cosine_schedule, sample_loop

COMMANDS = ("makedata", "pretrain", "adapt", "fuse", "sample", "eval")

USAGE_EXIT = 2
FAILURE_EXIT = 1


def _schedule(cfg: RunConfig):
    return make_cosine_schedule(cfg.schedule.horizon, cfg.schedule.offset)


def _predictor_arch(cfg: RunConfig) -> PredictorConfig:
    p = cfg.predictor
    # in/cond bands are placeholders; pretrain() rewires them per role
    return PredictorConfig(
        in_bands=1, cond_bands=1,
        base_channels=p.base_channels,
        channel_mults=tuple(p.channel_mults),
        res_blocks_per_level=p.res_blocks_per_level,
        time_embed_dim=p.time_embed_dim,
        norm_groups=p.norm_groups)


def _load_items(cfg: RunConfig):
    return dp.load_dataset(cfg.data.root, cfg.data.split)


def _training_pairs(cfg: RunConfig, items):
    pairs = []
    for item in items:
        size = min(cfg.data.tile, item.pair.pan.height, item.pair.pan.width)
        pairs.extend(dp.tile(item.pair, size, min(cfg.data.stride, size)))
    return pairs


def _cmd_makedata(cfg: RunConfig) -> None:
    d = cfg.data
    for i in range(d.synth_count):
        scene = dp.make_synthetic_scene(
            seed=d.synth_seed + i, height=d.synth_height, width=d.synth_width,
            bands=d.synth_bands, ratio=d.ratio)
        dp.save_scene(d.root, d.split, i, scene.pair, reference=scene.hrms)
    write_resolved(cfg, d.root)
    print(f"wrote {d.synth_count} synthetic scenes to {Path(d.root) / d.split}")


def _cmd_pretrain(cfg: RunConfig) -> None:
    items = _load_items(cfg)
    pairs = _training_pairs(cfg, items)
    train_cfg = pt.PretrainConfig(
        epochs=cfg.pretrain.epochs, batch_size=cfg.pretrain.batch_size,
        learning_rate=cfg.pretrain.learning_rate, horizon=cfg.schedule.horizon,
        seed=cfg.pretrain.seed, objective=cfg.pretrain.objective)
    ckpt_dir = Path(cfg.paths.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    schedule = _schedule(cfg)
    p2m, m2p = pt.pretrain(pairs, train_cfg, predictor_config=_predictor_arch(cfg),
                           schedule=schedule, log_path=ckpt_dir / "pretrain.log")
    for model, name in ((p2m, "p2m.ckpt"), (m2p, "m2p.ckpt")):
        save_checkpoint(model, ckpt_dir / name, train_config=train_cfg.as_dict(),
                        epoch=train_cfg.epochs, schedule_offset=cfg.schedule.offset)
    write_resolved(cfg, ckpt_dir)
    print(f"pretrained {len(pairs)} tiles for {train_cfg.epochs} epochs -> {ckpt_dir}")


def _adapt_config(cfg: RunConfig) -> fusion.AdaptConfig:
    a = cfg.adapt
    return fusion.AdaptConfig(
        feature_step=a.feature_step, epochs=a.epochs, batch_size=a.batch_size,
        learning_rate=a.learning_rate, lam=a.lam, mode=a.mode,
        attention_enabled=a.attention_enabled, seed=a.seed,
        inference_seed=a.inference_seed)


def _load_predictors(cfg: RunConfig):
    ckpt_dir = Path(cfg.paths.checkpoint_dir)
    return (load_checkpoint(ckpt_dir / "p2m.ckpt"),
            load_checkpoint(ckpt_dir / "m2p.ckpt"))


def _cmd_adapt(cfg: RunConfig) -> None:
    items = _load_items(cfg)
    p2m, m2p = _load_predictors(cfg)
    adapt_cfg = _adapt_config(cfg)
    dataset = [(it.pair, it.reference) for it in items]
    channels = fusion.concat_level_channels(p2m.config, m2p.config)
    rng = torch.Generator().manual_seed(adapt_cfg.seed)
    head = fusion.build_fusion_head(channels, p2m.config.in_bands, rng,
                                    attention_enabled=adapt_cfg.attention_enabled)
    ckpt_dir = Path(cfg.paths.checkpoint_dir)
    fusion.adapt(p2m, m2p, head, dataset, adapt_cfg, _schedule(cfg),
                 log_path=ckpt_dir / "adapt.log", qnr_block=cfg.eval.block)
    fusion.save_fusion_head(head, ckpt_dir / "fusion_head.ckpt",
                            adapt_config=adapt_cfg.as_dict(), epoch=adapt_cfg.epochs,
                            schedule_offset=cfg.schedule.offset)
    write_resolved(cfg, ckpt_dir)
    print(f"adapted fusion head ({adapt_cfg.mode}) on {len(dataset)} pairs -> {ckpt_dir}")


def _cmd_fuse(cfg: RunConfig) -> None:
    items = _load_items(cfg)
    p2m, m2p = _load_predictors(cfg)
    head = fusion.load_fusion_head(Path(cfg.paths.checkpoint_dir) / "fusion_head.ckpt")
    adapt_cfg = _adapt_config(cfg)
    schedule = _schedule(cfg)
    out_dir = Path(cfg.paths.report_dir) / cfg.data.split
    out_dir.mkdir(parents=True, exist_ok=True)
    for item in items:
        fms = fusion.pansharpen(p2m, m2p, head, item.pair, adapt_cfg, schedule)
        dp.write_raster(fms, out_dir / f"{item.index}_fms.raster")
        dp.export_png(fms, out_dir / f"{item.index}_fms.png")
    write_resolved(cfg, Path(cfg.paths.report_dir))
    print(f"fused {len(items)} pairs -> {out_dir}")


def _cmd_sample(cfg: RunConfig) -> None:
    items = _load_items(cfg)
    p2m, m2p = _load_predictors(cfg)
    schedule = _schedule(cfg)
    pair = items[0].pair
    ms_up = upsample(pair.ms, pair.ratio)
    out_dir = Path(cfg.paths.report_dir) / "sample"
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = torch.Generator().manual_seed(cfg.adapt.inference_seed)
    ms_hat = sample_loop(p2m, pair.pan, pair.ms.bands, schedule, rng)
    pan_hat = sample_loop(m2p, ms_up, 1, schedule, rng)
    for img, name in ((ms_hat, "p2m_ms"), (pan_hat, "m2p_pan"),
                      (pair.pan, "cond_pan"), (ms_up, "cond_ms_up")):
        dp.write_raster(img, out_dir / f"{name}.raster")
        dp.export_png(img, out_dir / f"{name}.png")
    write_resolved(cfg, Path(cfg.paths.report_dir))
    print(f"cross-predictive samples -> {out_dir}")


def _cmd_eval(cfg: RunConfig) -> None:
    items = _load_items(cfg)
    fused_dir = Path(cfg.paths.report_dir) / cfg.data.split
    rows = []
    for item in items:
        fms_path = fused_dir / f"{item.index}_fms.raster"
        if not fms_path.exists():
            raise FileNotFoundError(f"missing fused raster {fms_path}; run `fuse` first")
        fms = dp.read_raster(fms_path, kind=None)
        rows.append((item.pair, fms, item.reference))
    report = metrics.evaluate(rows, cfg.eval.mode, cfg.eval.block)
    report_dir = Path(cfg.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    stem = f"report_{cfg.data.split}_{cfg.eval.mode}"
    (report_dir / f"{stem}.txt").write_text(report.to_text())
    (report_dir / f"{stem}.json").write_text(report.to_json())
    write_resolved(cfg, report_dir)
    print(report.to_text(), end="")


_HANDLERS = {
    "makedata": _cmd_makedata,
    "pretrain": _cmd_pretrain,
    "adapt": _cmd_adapt,
    "fuse": _cmd_fuse,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
}


def dispatch(command: str, config_path=None, overrides: list[str] | None = None) -> int:
    """Run one command; returns the process exit status."""
    if command not in COMMANDS:
        print(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}",
              file=sys.stderr)
        return USAGE_EXIT
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    try:
        _HANDLERS[command](cfg)
    except Exception as exc:     # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE_EXIT
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pansharp",
        description="Cross-predictive diffusion pansharpening pipeline")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="YAML run configuration")
    args, extra = parser.parse_known_args(argv)
    bad = [e for e in extra if not (e.startswith("--") and "=" in e and "." in e)]
    if bad:
        print(f"unrecognized arguments: {' '.join(bad)}", file=sys.stderr)
        return USAGE_EXIT
    return dispatch(args.command, args.config, extra)


if __name__ == "__main__":
    sys.exit(main())
