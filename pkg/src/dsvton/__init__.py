"""Dual-scale residual-guided diffusion for virtual try-on, desk scale.

Layout: schedule (timestep tables), diffusion (forward/reverse processes),
denoiser (hand-rolled reference-conditioned network), pipeline (two-stage
generation), synthdata (procedural try-on corpus), metrics (kernel two-sample
statistic and paired errors), cli (commands and persistence).
"""

__version__ = "0.1.0"

from .errors import NumericalError, ValidationError
from .schedule import NoiseSchedule, ddim_timesteps, make_linear_schedule
from .diffusion import (
    ResidualCoefficients,
    ddim_step,
    ddpm_step,
    forward_residual,
    forward_standard,
    init_residual_latent,
    mse_loss,
    predict_x0,
    training_target,
)

__all__ = [
    "NumericalError",
    "ValidationError",
    "NoiseSchedule",
    "ddim_timesteps",
    "make_linear_schedule",
    "ResidualCoefficients",
    "ddim_step",
    "ddpm_step",
    "forward_residual",
    "forward_standard",
    "init_residual_latent",
    "mse_loss",
    "predict_x0",
    "training_target",
]
