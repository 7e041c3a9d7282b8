"""Sample-to-batch preparation and ancestral sampling of point flow."""

from __future__ import annotations

import numpy as np

from ..geometry import QuerySet, ScenePointCloud
from ..instruction import Instruction
from ..numerics.autograd import no_grad
from .network import AffordanceModel, ModelInput, language_ids
from .schedule import NoiseSchedule, reverse_step


class SamplingError(FloatingPointError):
    pass


def prepare_input(scene: ScenePointCloud, queries: QuerySet, instruction: Instruction,
                  n_scene: int, rng: np.random.Generator) -> dict:
    """Resample the scene to ``n_scene`` points and center everything on the query centroid."""
    n = len(scene)
    idx = rng.choice(n, size=n_scene, replace=n < n_scene)
    q = queries.points
    center = q.mean(axis=0)
    return {
        "scene_xyz": scene.points[idx] - center,
        "scene_rgb": scene.colors[idx],
        "query_xyz": q - center,
        "query_role": queries.role_mask,
        "instruction": instruction,
        "center": center,
    }


def collate(items: list[dict]) -> ModelInput:
    a, t, g = language_ids([it["instruction"] for it in items])
    return ModelInput(
        scene_xyz=np.stack([it["scene_xyz"] for it in items]),
        scene_rgb=np.stack([it["scene_rgb"] for it in items]),
        query_xyz=np.stack([it["query_xyz"] for it in items]),
        query_role=np.stack([it["query_role"] for it in items]),
        action=a, tool_noun=t, target_noun=g,
    )


def draw_sampling_noise(rng: np.random.Generator, K: int, shape: tuple) -> np.ndarray:
    """All noise an ancestral run consumes: index 0 is x_K, index j the z used at step K+1-j."""
    return rng.standard_normal((K,) + tuple(shape))


def sample_flow(model: AffordanceModel, batch: ModelInput, rng: np.random.Generator | None = None,
                noise: np.ndarray | None = None, schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Ancestral reverse diffusion; returns predicted steps in meters, (B, Nq, m, 3)."""
    cfg = model.cfg
    sched = schedule or NoiseSchedule.from_config(cfg)
    B, Nq, m = batch.B, batch.n_query, cfg.m
    if noise is None:
        noise = draw_sampling_noise(rng if rng is not None else np.random.default_rng(0), sched.K, (B, Nq, m, 3))
    noise = noise.reshape(sched.K, B * Nq, m, 3)
    with no_grad():
        cond = model.condition(batch)
        c = cond.c_cond.reshape(B * Nq, cfg.d_model)
        x = noise[0]
        for k in range(sched.K, 0, -1):
            eps_hat = model.denoise(x, np.full(B * Nq, k), c).data
            z = noise[sched.K + 1 - k] if k > 1 else None
            x = reverse_step(x, k, eps_hat, sched, z)
            if not np.all(np.isfinite(x)):
                raise SamplingError(f"non-finite values at diffusion step {k}")
    return (x * cfg.flow_scale).reshape(B, Nq, m, 3)
