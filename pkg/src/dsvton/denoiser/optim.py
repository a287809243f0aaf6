"""AdamW with decoupled weight decay, operating on the flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ValidationError
from .params import DenoiserParams

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adamw_step(params: DenoiserParams, grads: np.ndarray, state: AdamState,
               lr: float, weight_decay: float = 0.0) -> tuple[DenoiserParams, AdamState]:
    """One in-place update; decay is decoupled from the adaptive step."""
    if grads.shape != params.vec.shape:
        raise ValidationError("gradient/parameter size mismatch")
    if not lr > 0:
        raise ValidationError(f"lr must be positive, got {lr}")
    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite gradients")
    state.step += 1
    state.m *= BETA1
    state.m += (1 - BETA1) * grads
    state.v *= BETA2
    state.v += (1 - BETA2) * grads * grads
    mhat = state.m / (1 - BETA1 ** state.step)
    vhat = state.v / (1 - BETA2 ** state.step)
    if weight_decay:
        params.vec *= 1.0 - lr * weight_decay
    params.vec -= lr * mhat / (np.sqrt(vhat) + EPS)
    return params, state
