"""Central-finite-difference verification of the analytic gradient."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .network import TrainBatch, loss_and_grad
from .params import DenoiserParams

DEFAULT_FD_EPS = 1e-6
REL_FLOOR = 1e-12


def gradient_check_report(params: DenoiserParams, batch: TrainBatch,
                          n_coords: int = 50, fd_eps: float = DEFAULT_FD_EPS,
                          seed: int = 0, corrupt_group: str | None = None
                          ) -> dict[str, float]:
    """Max relative error per layer group, coordinates stratified by group.

    corrupt_group doubles that group's analytic gradient before comparison —
    a fault injection used to prove the harness itself can detect a wrong
    backward pass.
    """
    if n_coords < 1:
        raise ValidationError("n_coords must be >= 1")
    _, grad = loss_and_grad(batch, params)
    if corrupt_group is not None:
        slices = params.group_slices()
        if corrupt_group not in slices:
            raise ValidationError(f"unknown layer group {corrupt_group!r}")
        grad = grad.copy()
        for lo, hi in slices[corrupt_group]:
            grad[lo:hi] *= 2.0

    rng = np.random.default_rng(seed)
    groups = params.group_slices()
    per_group = max(1, int(np.ceil(n_coords / len(groups))))
    report: dict[str, float] = {}
    theta = params.vec
    for group, ranges in groups.items():
        idx_pool = np.concatenate([np.arange(lo, hi) for lo, hi in ranges])
        take = min(per_group, idx_pool.size)
        coords = rng.choice(idx_pool, size=take, replace=False)
        worst = 0.0
        for i in coords:
            h = fd_eps * max(1.0, abs(theta[i]))
            orig = theta[i]
            theta[i] = orig + h
            lp, _ = loss_and_grad(batch, params)
            theta[i] = orig - h
            lm, _ = loss_and_grad(batch, params)
            theta[i] = orig
            fd = (lp - lm) / (2 * h)
            a = grad[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), REL_FLOOR)
            worst = max(worst, rel)
        report[group] = worst
    return report


def gradient_check(params: DenoiserParams, batch: TrainBatch,
                   n_coords: int = 50, fd_eps: float = DEFAULT_FD_EPS,
                   seed: int = 0) -> float:
    """Max relative error over all sampled coordinates."""
    report = gradient_check_report(params, batch, n_coords, fd_eps, seed)
    return max(report.values())
