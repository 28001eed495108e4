"""Expectation-maximization with latent diffusion priors for blind inverse problems.

The E-step draws latent posterior samples with annealed data consistency;
the M-step re-estimates the forward operator (a blur kernel via half-quadratic
splitting, or a view rotation via gradient descent).  Priors are analytic
Gaussians and Gaussian mixtures so every stage can be checked in closed form.
"""

from .codec import LinearCodec, identity_codec, pool_codec, random_codec
from .em import (
    EMConfig,
    SkipSchedule,
    count_skipped,
    run_blind_deblur,
    run_nonblind_dps,
    run_posefree,
    should_run_full,
)
from .estep import AnnealSchedule, annealing_factor, estep_reverse_step
from .forward import ConvolutionOperator, PoseParam, convolve, view_transform
from .metrics import mnc, psnr, ssim
from .mstep import HQSConfig, estimate_kernel, estimate_pose, hqs_data_update, simplex_project
from .multiview import ViewWeightSchedule, combine_scores, consistent_reverse_step, gamma_t
from .prior import GaussianMixturePrior, GaussianPrior, PriorScore
from .sched import NoiseSchedule, build_linear_schedule, reverse_coeffs, tweedie_estimate

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "ConvolutionOperator",
    "EMConfig",
    "GaussianMixturePrior",
    "GaussianPrior",
    "HQSConfig",
    "LinearCodec",
    "NoiseSchedule",
    "PoseParam",
    "PriorScore",
    "SkipSchedule",
    "ViewWeightSchedule",
    "annealing_factor",
    "build_linear_schedule",
    "combine_scores",
    "consistent_reverse_step",
    "convolve",
    "count_skipped",
    "estep_reverse_step",
    "estimate_kernel",
    "estimate_pose",
    "gamma_t",
    "hqs_data_update",
    "identity_codec",
    "mnc",
    "pool_codec",
    "psnr",
    "random_codec",
    "reverse_coeffs",
    "run_blind_deblur",
    "run_nonblind_dps",
    "run_posefree",
    "should_run_full",
    "simplex_project",
    "ssim",
    "tweedie_estimate",
    "view_transform",
]
