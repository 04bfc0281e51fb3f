"""Cross-predictive diffusion pansharpening toolkit.

Two-stage pipeline: self-supervised pre-training of a PAN->MS and an
MS->PAN conditional denoiser, then frozen-encoder feature extraction into
an attention-guided fusion head trained with an unsupervised full-resolution
loss (or supervised L1 at reduced resolution), plus the quality-metric and
data-simulation stack needed to verify it end to end.
"""

from .image import ImagePair, Kind, MultibandImage, channel_mean, downsample, upsample
from .predictor import (FeaturePyramid, NoisePredictor, PredictorConfig,
                        build_predictor, encode_features, predict_noise,
                        sinusoidal_time_embedding)
from .schedule import (NoiseSchedule, make_cosine_schedule, p_sample_step,
                       posterior_mean_variance, q_sample, sample_loop)

__all__ = [
    "ImagePair", "Kind", "MultibandImage", "channel_mean", "downsample", "upsample",
    "FeaturePyramid", "NoisePredictor", "PredictorConfig", "build_predictor",
    "encode_features", "predict_noise", "sinusoidal_time_embedding",
    "NoiseSchedule", "make_cosine_schedule", "p_sample_step",
    "posterior_mean_variance", "q_sample", "sample_loop",
]

__version__ = "0.1.0"
