"""rainsr: super-resolution of rain-degraded images with a diffusion-sampled
guidance prior, on a small numpy autodiff core."""

from .analysis import hf_energy_ratio, psnr, radial_spectrum, ssim
from .data import ImagePair, RainParams, gen_clean, make_pair, write_dataset
from .diffusion import make_schedule, q_sample, reverse_step, sample_prior
from .filters import classical_guided_filter, gfm, high_pass_dct
from .model import (
    ModelConfig,
    encode_condition,
    encode_prior,
    forward,
    init_model_params,
)
from .tensor import NonFiniteError, Tensor, gradients, no_grad
from .training import TrainConfig, infer_one, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "ImagePair",
    "ModelConfig",
    "NonFiniteError",
    "RainParams",
    "Tensor",
    "TrainConfig",
    "classical_guided_filter",
    "encode_condition",
    "encode_prior",
    "forward",
    "gen_clean",
    "gfm",
    "gradients",
    "hf_energy_ratio",
    "high_pass_dct",
    "infer_one",
    "init_model_params",
    "make_pair",
    "make_schedule",
    "no_grad",
    "psnr",
    "q_sample",
    "radial_spectrum",
    "reverse_step",
    "sample_prior",
    "ssim",
    "train_stage1",
    "train_stage2",
    "write_dataset",
]
