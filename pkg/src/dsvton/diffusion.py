"""Forward/reverse diffusion in pixel space, standard and residual-guided.

Images are float64 numpy arrays, shape (H, W, C) or batched (B, H, W, C).
The residual-guided variant replaces the pure-noise component with the blend
alpha*eps + beta*guide, where `guide` is the upsampled low-resolution result;
denoising then converts that blend into the residual between scales.

All operations are pure: callers supply every noise draw (eps, z) explicitly
so trajectories are reproducible and oracle-checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .schedule import NoiseSchedule

MIN_ALPHA_BAR_FOR_INVERSION = 1e-12


@dataclass(frozen=True)
class ResidualCoefficients:
    """Noise/structure balance for the residual-guided process.

    alpha scales the Gaussian component, beta the low-resolution guide.
    alpha = beta = 0.5 is the shipped default; alpha=1, beta=0 reduces every
    residual-mode operation to the standard process.
    """

    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValidationError("coefficients must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("coefficients must be nonnegative")
        if self.alpha + self.beta <= 0:
            raise ValidationError("at least one coefficient must be positive")

    @property
    def is_identity(self) -> bool:
        return self.alpha == 1.0 and self.beta == 0.0


def _check_same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValidationError(f"shape mismatch: {sorted(shapes)}")


def _per_sample(coef, x):
    """Broadcast a scalar or per-sample (B,) coefficient over x's trailing dims."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    if coef.shape[0] != x.shape[0]:
        raise ValidationError(
            f"per-sample coefficient length {coef.shape[0]} != batch {x.shape[0]}"
        )
    return coef.reshape(coef.shape + (1,) * (x.ndim - 1))


def forward_standard(x0: np.ndarray, t, eps: np.ndarray,
                     sched: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: x_t = sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps.

    t may be a scalar in [0, T] or a per-sample integer array. t=0 returns
    x0 bit-exactly (alpha_bar[0] == 1).
    """
    _check_same_shape(x0, eps)
    ab = sched.alpha_bar(t)
    return _per_sample(np.sqrt(ab), x0) * x0 + _per_sample(np.sqrt(1.0 - ab), x0) * eps


def forward_residual(x0: np.ndarray, lr_guide: np.ndarray, t, eps: np.ndarray,
                     sched: NoiseSchedule, coeffs: ResidualCoefficients) -> np.ndarray:
    """Residual-guided noising: the noise slot carries alpha*eps + beta*guide.

    lr_guide must already be upsampled to x0's resolution.
    """
    _check_same_shape(x0, lr_guide, eps)
    ab = sched.alpha_bar(t)
    blend = coeffs.alpha * eps + coeffs.beta * lr_guide
    return _per_sample(np.sqrt(ab), x0) * x0 + _per_sample(np.sqrt(1.0 - ab), x0) * blend


def init_residual_latent(lr_guide: np.ndarray, eps: np.ndarray,
                         coeffs: ResidualCoefficients) -> np.ndarray:
    """Starting latent of the high-resolution stage: alpha*eps + beta*guide."""
    _check_same_shape(lr_guide, eps)
    return coeffs.alpha * eps + coeffs.beta * lr_guide


def training_target(mode: str, eps: np.ndarray, lr_guide: np.ndarray | None,
                    coeffs: ResidualCoefficients) -> np.ndarray:
    """What the denoiser is trained to predict.

    standard -> eps; residual -> alpha*eps + beta*guide (the same blend the
    forward process injected, so a perfect predictor inverts it exactly).
    """
    if mode == "standard":
        return eps
    if mode == "residual":
        if lr_guide is None:
            raise ValidationError("residual training target requires lr_guide")
        _check_same_shape(eps, lr_guide)
        return coeffs.alpha * eps + coeffs.beta * lr_guide
    raise ValidationError(f"unknown mode {mode!r}")


def predict_x0(x_t: np.ndarray, pred: np.ndarray, t,
               sched: NoiseSchedule) -> np.ndarray:
    """Invert the closed-form noising given the model's noise-slot prediction.

    Valid for both modes: pred stands for eps (standard) or the blend
    (residual). Requires 1 <= t <= T and alpha_bar_t above the inversion
    floor to avoid dividing by ~0.
    """
    _check_same_shape(x_t, pred)
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ValidationError(f"predict_x0 needs 1 <= t <= T, got {t}")
    ab = sched.alpha_bar(t)
    if np.any(ab < MIN_ALPHA_BAR_FOR_INVERSION):
        raise NumericalError(
            f"alpha_bar at t={t} below {MIN_ALPHA_BAR_FOR_INVERSION:.0e}; "
            "inversion would blow up"
        )
    num = x_t - _per_sample(np.sqrt(1.0 - ab), x_t) * pred
    return num / _per_sample(np.sqrt(ab), x_t)


def ddpm_step(x_t: np.ndarray, pred: np.ndarray, t, z: np.ndarray,
              sched: NoiseSchedule) -> np.ndarray:
    """One stochastic reverse step; identical arithmetic in both modes.

    x_{t-1} = (x_t - (1-a_t)/sqrt(1-ab_t) * pred) / sqrt(a_t) + sigma_t * z.
    Callers pass z = 0 at t = 1 by convention.
    """
    _check_same_shape(x_t, pred, z)
    a = sched.alpha(t)
    ab = sched.alpha_bar(t)
    coef = _per_sample((1.0 - a) / np.sqrt(1.0 - ab), x_t)
    mean = (x_t - coef * pred) / _per_sample(np.sqrt(a), x_t)
    return mean + _per_sample(sched.sigma(t), x_t) * z


def ddim_step(x_t: np.ndarray, pred: np.ndarray, t_from: int, t_to: int,
              sched: NoiseSchedule) -> np.ndarray:
    """Deterministic jump t_from -> t_to (t_to < t_from; t_to = 0 allowed).

    Re-noises the inverted x0 estimate at the target level; at t_to = 0 the
    x0 estimate is returned as-is.
    """
    if not (0 <= t_to < t_from <= sched.T):
        raise ValidationError(
            f"need 0 <= t_to < t_from <= T, got ({t_from}, {t_to})"
        )
    x0_hat = predict_x0(x_t, pred, t_from, sched)
    if t_to == 0:
        return x0_hat
    ab_to = sched.alpha_bar(t_to)
    return np.sqrt(ab_to) * x0_hat + np.sqrt(1.0 - ab_to) * pred


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared elementwise difference."""
    _check_same_shape(pred, target)
    diff = pred - target
    return float(np.mean(diff * diff))
