"""Stage-1 self-supervised cross-predictive pre-training.

Two conditional denoisers are trained side by side on the same batches: the
P2M branch denoises upsampled MS conditioned on PAN, the M2P branch denoises
PAN conditioned on upsampled MS. The branches share no parameters and are
stepped alternately within the same loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .image import ImagePair, upsample
from .predictor import ROLE_M2P, ROLE_P2M, NoisePredictor, PredictorConfig, build_predictor
from .schedule import NoiseSchedule, _predictor_dtype, make_cosine_schedule

OBJECTIVE_NOISE = "NOISE"
OBJECTIVE_CLEAN = "CLEAN"


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 1000
    batch_size: int = 32
    learning_rate: float = 3e-4
    horizon: int = 1000
    seed: int = 0
    objective: str = OBJECTIVE_NOISE

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.objective not in (OBJECTIVE_NOISE, OBJECTIVE_CLEAN):
            raise ValueError(f"objective must be NOISE or CLEAN, got {self.objective!r}")

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "horizon": self.horizon,
            "seed": self.seed,
            "objective": self.objective,
        }


def _pair_tensors(pair: ImagePair, dtype=torch.float32):
    """(pan, ms_up) as (C, H, W) tensors; the upsampled MS is computed once."""
    ms_up = upsample(pair.ms, pair.ratio)
    pan_t = torch.from_numpy(pair.pan.data.copy()).permute(2, 0, 1).to(dtype)
    msup_t = torch.from_numpy(ms_up.data.copy()).permute(2, 0, 1).to(dtype)
    return pan_t, msup_t


def _gather_sqrt(values: np.ndarray, t: torch.Tensor, dtype) -> torch.Tensor:
    out = torch.from_numpy(np.sqrt(values)[t.numpy() - 1]).to(dtype)
    return out[:, None, None, None]


def _branch_loss(predictor, x0: torch.Tensor, cond: torch.Tensor,
                 schedule: NoiseSchedule, objective: str,
                 rng: torch.Generator) -> torch.Tensor:
    """Denoising loss for one branch on a stacked (B, C, H, W) batch."""
    b = x0.shape[0]
    t = torch.randint(1, schedule.horizon + 1, (b,), generator=rng)
    eps = torch.randn(x0.shape, generator=rng, dtype=torch.float64).to(x0.dtype)
    sqrt_g = _gather_sqrt(schedule.gammas, t, x0.dtype)
    sqrt_one_minus_g = _gather_sqrt(1.0 - schedule.gammas, t, x0.dtype)
    x_t = sqrt_g * x0 + sqrt_one_minus_g * eps
    pred = predictor(x_t, cond, t)
    target = eps if objective == OBJECTIVE_NOISE else x0
    return F.mse_loss(pred, target)


def pretrain_step(predictor, batch: list[ImagePair], schedule: NoiseSchedule,
                  objective: str, rng: torch.Generator) -> torch.Tensor:
    """Differentiable pre-training loss over a batch of pairs.

    The predictor's role selects the wiring: P2M denoises the upsampled MS
    conditioned on PAN; M2P denoises PAN conditioned on upsampled MS. Step
    indices are drawn uniformly per sample.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    dtype = _predictor_dtype(predictor) or torch.float64
    pans, msups = zip(*(_pair_tensors(p, dtype) for p in batch))
    pan = torch.stack(pans)
    msup = torch.stack(msups)
    role = getattr(predictor, "role", ROLE_P2M)
    if role == ROLE_P2M:
        return _branch_loss(predictor, msup, pan, schedule, objective, rng)
    return _branch_loss(predictor, pan, msup, schedule, objective, rng)


def _batches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _cosine_lr(base_lr: float, epoch: int, epochs: int, floor: float = 0.05) -> float:
    """Cosine decay from base_lr to floor*base_lr across the run."""
    if epochs <= 1:
        return base_lr
    frac = (epoch - 1) / (epochs - 1)
    return base_lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def pretrain(dataset: list[ImagePair], cfg: PretrainConfig,
             predictor_config: PredictorConfig | None = None,
             schedule: NoiseSchedule | None = None,
             log_path=None) -> tuple[NoisePredictor, NoisePredictor]:
    """Train fresh P2M and M2P predictors over the dataset.

    Both branches use AdamW (betas 0.9/0.999, weight decay 0.01) and are
    stepped on every batch; the learning rate follows a cosine decay to 5%
    of its base value, which is what lets small-data runs anneal onto the
    data rather than orbiting it. Fully deterministic for a fixed config:
    weight init, shuffling, step indices and noise all derive from
    ``cfg.seed``. Writes one ``epoch=<n> p2m_loss=<f> m2p_loss=<f>`` line
    per epoch when ``log_path`` is given.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    bands = dataset[0].ms.bands
    if any(p.ms.bands != bands or p.pan.bands != 1 for p in dataset):
        raise ValueError("dataset pairs must have consistent band counts")

    if schedule is None:
        schedule = make_cosine_schedule(cfg.horizon)
    if predictor_config is None:
        predictor_config = PredictorConfig(in_bands=bands, cond_bands=1)
    p2m_config = PredictorConfig(
        in_bands=bands, cond_bands=1,
        base_channels=predictor_config.base_channels,
        channel_mults=predictor_config.channel_mults,
        res_blocks_per_level=predictor_config.res_blocks_per_level,
        time_embed_dim=predictor_config.time_embed_dim,
        norm_groups=predictor_config.norm_groups)
    m2p_config = PredictorConfig(
        in_bands=1, cond_bands=bands,
        base_channels=predictor_config.base_channels,
        channel_mults=predictor_config.channel_mults,
        res_blocks_per_level=predictor_config.res_blocks_per_level,
        time_embed_dim=predictor_config.time_embed_dim,
        norm_groups=predictor_config.norm_groups)

    init_rng = torch.Generator().manual_seed(cfg.seed)
    p2m = build_predictor(p2m_config, init_rng, role=ROLE_P2M)
    m2p = build_predictor(m2p_config, init_rng, role=ROLE_M2P)

    tensors = [_pair_tensors(p) for p in dataset]
    pan_all = torch.stack([t[0] for t in tensors])
    msup_all = torch.stack([t[1] for t in tensors])

    opt_p2m = torch.optim.AdamW(p2m.parameters(), lr=cfg.learning_rate,
                                betas=(0.9, 0.999), weight_decay=0.01)
    opt_m2p = torch.optim.AdamW(m2p.parameters(), lr=cfg.learning_rate,
                                betas=(0.9, 0.999), weight_decay=0.01)
    shuffle_rng = np.random.default_rng(cfg.seed)
    noise_rng = torch.Generator().manual_seed(cfg.seed + 1)

    log = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = _cosine_lr(cfg.learning_rate, epoch, cfg.epochs)
            for opt in (opt_p2m, opt_m2p):
                for group in opt.param_groups:
                    group["lr"] = lr
            perm = shuffle_rng.permutation(len(dataset))
            p2m_losses, m2p_losses = [], []
            for idx in _batches(len(dataset), cfg.batch_size, perm):
                sel = torch.from_numpy(np.ascontiguousarray(idx))
                pan_b = pan_all[sel]
                msup_b = msup_all[sel]

                loss_p = _branch_loss(p2m, msup_b, pan_b, schedule, cfg.objective, noise_rng)
                opt_p2m.zero_grad()
                loss_p.backward()
                opt_p2m.step()
                p2m_losses.append(loss_p.item())

                loss_m = _branch_loss(m2p, pan_b, msup_b, schedule, cfg.objective, noise_rng)
                opt_m2p.zero_grad()
                loss_m.backward()
                opt_m2p.step()
                m2p_losses.append(loss_m.item())
            if log is not None:
                log.write(f"epoch={epoch} p2m_loss={np.mean(p2m_losses):.10g} "
                          f"m2p_loss={np.mean(m2p_losses):.10g}\n")
                log.flush()
    finally:
        if log is not None:
            log.close()
    return p2m, m2p
