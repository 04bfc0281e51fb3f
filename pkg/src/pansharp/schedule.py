"""Noise schedule construction, forward diffusion, and reverse sampling.

Time steps are 1-based: t runs over {1, ..., T} and gamma(0) is defined as 1
so the posterior variance is well defined at t = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
import torch

from .image import Kind, MultibandImage


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step retention factors alpha_t and their running products gamma_t."""

    horizon: int
    alphas: np.ndarray    # length T, alphas[t-1] = alpha_t
    gammas: np.ndarray    # length T, gammas[t-1] = prod_{i<=t} alpha_i
    offset: float

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def gamma(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.gammas[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.horizon:
            raise ValueError(f"step index {t} outside 1..{self.horizon}")


def make_cosine_schedule(horizon: int, offset: float = 0.008) -> NoiseSchedule:
    """Cosine noise schedule with squared-cosine cumulative products.

    gamma_t = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2); the
    per-step beta_t = 1 - alpha_t is clipped at 0.999 and the gammas are
    recomputed as the running product of the clipped alphas.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if offset <= 0:
        raise ValueError(f"offset must be positive, got {offset}")
    t = np.arange(horizon + 1, dtype=np.float64)
    f = np.cos(((t / horizon + offset) / (1.0 + offset)) * np.pi / 2.0) ** 2
    gammas = f / f[0]
    alphas = gammas[1:] / gammas[:-1]
    alphas = np.clip(alphas, 1.0 - 0.999, None)
    gammas = np.cumprod(alphas)
    return NoiseSchedule(horizon=horizon, alphas=alphas, gammas=gammas, offset=offset)


def _raw(x):
    """Unwrap a MultibandImage to its array; pass arrays/tensors through."""
    return x.data if isinstance(x, MultibandImage) else x


def q_sample(x0, t: int, eps, schedule: NoiseSchedule):
    """Closed-form forward diffusion: sqrt(gamma_t) x0 + sqrt(1 - gamma_t) eps.

    Accepts a MultibandImage (returns a NOISE_STATE image), a numpy array, or
    a torch tensor (returned in kind).
    """
    x0_raw, eps_raw = _raw(x0), _raw(eps)
    if tuple(x0_raw.shape) != tuple(eps_raw.shape):
        raise ValueError(f"eps shape {tuple(eps_raw.shape)} != x0 shape {tuple(x0_raw.shape)}")
    schedule._check_t(t)
    g = schedule.gamma(t)
    out = math.sqrt(g) * x0_raw + math.sqrt(1.0 - g) * eps_raw
    if isinstance(x0, MultibandImage):
        return MultibandImage(out, Kind.NOISE_STATE)
    return out


def posterior_variance(t: int, schedule: NoiseSchedule) -> float:
    """(1 - alpha_t)(1 - gamma_{t-1}) / (1 - gamma_t); zero at t = 1."""
    a = schedule.alpha(t)
    g_prev = schedule.gamma(t - 1)
    g = schedule.gamma(t)
    return (1.0 - a) * (1.0 - g_prev) / (1.0 - g)


def posterior_mean_variance(x_t, t: int, eps_hat, schedule: NoiseSchedule):
    """Reverse-step mean and variance from a noise estimate.

    mean = (x_t - ((1 - alpha_t)/sqrt(1 - gamma_t)) eps_hat) / sqrt(alpha_t)
    """
    x_raw, e_raw = _raw(x_t), _raw(eps_hat)
    if tuple(x_raw.shape) != tuple(e_raw.shape):
        raise ValueError(f"eps_hat shape {tuple(e_raw.shape)} != x_t shape {tuple(x_raw.shape)}")
    a = schedule.alpha(t)
    g = schedule.gamma(t)
    coeff = (1.0 - a) / math.sqrt(1.0 - g)
    mean = (x_raw - coeff * e_raw) / math.sqrt(a)
    return mean, posterior_variance(t, schedule)


def _to_bchw(x, dtype=None) -> torch.Tensor:
    """(H, W, C) image/array/tensor to a (1, C, H, W) tensor."""
    raw = _raw(x)
    if isinstance(raw, torch.Tensor):
        t = raw
    else:
        t = torch.from_numpy(np.array(raw))
    if dtype is not None:
        t = t.to(dtype)
    return t.permute(2, 0, 1).unsqueeze(0)


def _predictor_dtype(predictor):
    try:
        return next(predictor.parameters()).dtype
    except (AttributeError, StopIteration):
        return None


def _reverse_mean(x: torch.Tensor, eps_hat: torch.Tensor, t: int,
                  schedule: NoiseSchedule) -> torch.Tensor:
    """Posterior mean with the implied clean image clamped to [0, 1].

    Clamping the denoised estimate is the standard stabilization for
    bounded-image sampling: near-pure-noise steps otherwise amplify
    predictor error by 1/sqrt(alpha_t) and the chain diverges. Whenever the
    prediction is consistent with an in-range image the clamp is inactive
    and this equals the plain posterior-mean formula exactly.
    """
    a = schedule.alpha(t)
    g = schedule.gamma(t)
    g_prev = schedule.gamma(t - 1)
    x0_hat = (x - math.sqrt(1.0 - g) * eps_hat) / math.sqrt(g)
    x0_hat = torch.clamp(x0_hat, 0.0, 1.0)
    return (math.sqrt(g_prev) * (1.0 - a) / (1.0 - g)) * x0_hat \
        + (math.sqrt(a) * (1.0 - g_prev) / (1.0 - g)) * x


def p_sample_step(predictor, x_t, cond, t: int, schedule: NoiseSchedule,
                  rng: torch.Generator):
    """One reverse sampling step x_t -> x_{t-1}.

    Draws the injected noise from ``rng``; the final step (t = 1) returns the
    posterior mean with no noise. The denoised estimate inside the mean is
    clamped to the image range (see ``_reverse_mean``). ``predictor`` is any
    callable mapping (x_bchw, cond_bchw, t_batch) to a noise estimate.
    """
    cfg = getattr(predictor, "config", None)
    x_raw, c_raw = _raw(x_t), _raw(cond)
    if cfg is not None and x_raw.shape[-1] + c_raw.shape[-1] != cfg.in_bands + cfg.cond_bands:
        raise ValueError(
            f"predictor expects {cfg.in_bands}+{cfg.cond_bands} channels, got "
            f"{x_raw.shape[-1]}+{c_raw.shape[-1]}")
    dtype = _predictor_dtype(predictor)
    xb = _to_bchw(x_t, dtype)
    cb = _to_bchw(cond, dtype if dtype is not None else xb.dtype)
    tb = torch.full((1,), t, dtype=torch.long)
    with torch.no_grad():
        eps_hat = predictor(xb, cb, tb)
    mean = _reverse_mean(xb, eps_hat, t, schedule)
    if t > 1:
        var = posterior_variance(t, schedule)
        z = torch.randn(xb.shape, generator=rng, dtype=torch.float64).to(xb.dtype)
        mean = mean + math.sqrt(var) * z
    out = mean.squeeze(0).permute(1, 2, 0)
    if isinstance(x_t, MultibandImage):
        return MultibandImage(out.numpy(), Kind.NOISE_STATE)
    if isinstance(_raw(x_t), np.ndarray):
        return out.numpy()
    return out


def sample_loop(predictor, cond, out_bands: int, schedule: NoiseSchedule,
                rng: torch.Generator) -> MultibandImage:
    """Full reverse chain from pure noise, conditioned on ``cond``.

    Starts at x_T ~ N(0, I) with the condition's spatial dims and
    ``out_bands`` channels, iterates t = T..1, and clips the result to
    [0, 1]. Single-band outputs are tagged PAN, multi-band ones MS_UP.
    """
    c_raw = _raw(cond)
    h, w = c_raw.shape[0], c_raw.shape[1]
    dtype = _predictor_dtype(predictor) or torch.float32
    cb = _to_bchw(cond, dtype)
    x = torch.randn((1, out_bands, h, w), generator=rng, dtype=torch.float64).to(dtype)
    for t in range(schedule.horizon, 0, -1):
        tb = torch.full((1,), t, dtype=torch.long)
        with torch.no_grad():
            eps_hat = predictor(x, cb, tb)
        x = _reverse_mean(x, eps_hat, t, schedule)
        if t > 1:
            var = posterior_variance(t, schedule)
            z = torch.randn(x.shape, generator=rng, dtype=torch.float64).to(dtype)
            x = x + math.sqrt(var) * z
    out = x.squeeze(0).permute(1, 2, 0).numpy()
    out = np.clip(out, 0.0, 1.0)
    kind = Kind.PAN if out_bands == 1 else Kind.MS_UP
    return MultibandImage(out, kind)
