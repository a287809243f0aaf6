"""Diffusion timestep bookkeeping: beta/alpha tables and DDIM subsequences.

Conventions: tables are 1-indexed by timestep t in {1..T}; alpha_bars
additionally carries alpha_bar[0] = 1 so t=0 means clean data. A schedule is
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Residual-guided sampling initializes from the guide blend rather than the
# full forward marginal; the two agree only when alpha_bar at the terminal
# step is negligible.
TERMINAL_ALPHA_BAR_GATE = 1e-4

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

# Desk-scale schedule: shorter chain, hotter betas, still under the terminal
# alpha_bar gate (alpha_bar_200 ~ 5.5e-5).
DESK_T = 200
DESK_BETA_START = 1e-4
DESK_BETA_END = 0.095


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed diffusion tables.

    betas/alphas/sigmas have length T and hold values for t = 1..T at index
    t-1. alpha_bars has length T+1 with alpha_bars[0] = 1.0 exactly.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)
    sigmas: np.ndarray = field(repr=False)

    def beta(self, t):
        return self.betas[self._check_t(t) - 1]

    def alpha(self, t):
        return self.alphas[self._check_t(t) - 1]

    def alpha_bar(self, t):
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValidationError(f"timestep out of range [0, {self.T}]: {t}")
        return self.alpha_bars[t]

    def sigma(self, t):
        return self.sigmas[self._check_t(t) - 1]

    def _check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValidationError(f"timestep out of range [1, {self.T}]: {t}")
        return t

    @property
    def terminal_alpha_bar(self) -> float:
        return float(self.alpha_bars[self.T])

    def check_residual_gate(self) -> None:
        """Reject schedules whose terminal alpha_bar would make the residual
        pipeline's latent initialization diverge from its forward marginal."""
        if self.terminal_alpha_bar > TERMINAL_ALPHA_BAR_GATE:
            raise ValidationError(
                f"terminal alpha_bar {self.terminal_alpha_bar:.3e} exceeds gate "
                f"{TERMINAL_ALPHA_BAR_GATE:.0e}; lengthen the chain or raise beta_end"
            )


def make_linear_schedule(T: int, beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Build the linear-beta schedule with all derived tables.

    betas are interpolated inclusive of both endpoints; sigma_t = sqrt(beta_t)
    (the simple stochastic reverse variance; DDIM sampling ignores it).
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValidationError(f"T must be a positive integer, got {T!r}")
    for name, v in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not np.isfinite(v):
            raise ValidationError(f"{name} must be finite, got {v!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.empty(T + 1, dtype=np.float64)
    alpha_bars[0] = 1.0
    alpha_bars[1:] = np.cumprod(alphas)
    sigmas = np.sqrt(betas)
    return NoiseSchedule(T=int(T), betas=betas, alphas=alphas,
                         alpha_bars=alpha_bars, sigmas=sigmas)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Uniformly strided, strictly increasing subsequence of {1..T} ending at T.

    Consumed in reverse during sampling; stride is floor(T / steps).
    """
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise ValidationError(f"steps must be a positive integer, got {steps!r}")
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValidationError(f"T must be a positive integer, got {T!r}")
    if steps > T:
        raise ValidationError(f"steps ({steps}) may not exceed T ({T})")
    stride = T // steps
    return [T - stride * k for k in range(steps - 1, -1, -1)]
