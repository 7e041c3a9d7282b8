"""Trajectory error metrics (meters)."""

from __future__ import annotations

import numpy as np


def ade_fde(pred, gt) -> tuple[float, float]:
    """Average and final displacement error between trajectories ``(..., Nq, m, 3)``.

    ADE averages the point error over queries and steps; FDE uses the last
    step only. Leading batch axes are averaged too.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    if pred.ndim < 3 or pred.shape[-1] != 3:
        raise ValueError(f"expected (..., Nq, m, 3) trajectories, got {pred.shape}")
    err = np.linalg.norm(pred - gt, axis=-1)
    return float(err.mean()), float(err[..., -1].mean())


def ade_fde_steps(pred_steps, gt_steps) -> tuple[float, float]:
    """Same metrics from per-step displacements (integrated from zero)."""
    return ade_fde(np.cumsum(pred_steps, axis=-2), np.cumsum(gt_steps, axis=-2))


def mean_step_norm(steps) -> float:
    return float(np.linalg.norm(np.asarray(steps), axis=-1).mean())
