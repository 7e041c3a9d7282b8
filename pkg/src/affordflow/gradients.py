"""Finite-difference check of the full training objective on a small model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geometry import QuerySet
from .model.config import ModelConfig, tiny_config
from .model.network import AffordanceModel
from .model.pipeline import collate, prepare_input
from .model.schedule import NoiseSchedule
from .numerics.gradcheck import gradcheck
from .numerics.rng import seeded_rng
from .synth.dataset import DatasetConfig, generate_sample
from .training import LossWeights, TrainBatch, total_loss


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_param: dict
    n_checked: int
    n_params: int
    seconds: float

    def worst(self, n: int = 5) -> list:
        return sorted(self.per_param.items(), key=lambda kv: -kv[1])[:n]


def tiny_batch(cfg: ModelConfig, seed: int = 0, n_query: int = 8, kinds=("open", "pour")) -> TrainBatch:
    """Two generated samples cut down to ``n_query`` queries (3:1 tool/target)."""
    rng = seeded_rng(seed, 41)
    items, gts = [], []
    n_tool = (3 * n_query) // 4
    for i, kind in enumerate(kinds):
        s = generate_sample(kind, seed, i, DatasetConfig())
        role = s.gt_flow.role_mask
        tool = rng.choice(np.flatnonzero(role == 1), n_tool, replace=False)
        target = rng.choice(np.flatnonzero(role == 0), n_query - n_tool, replace=False)
        pick = np.concatenate([tool, target])
        q = s.queries.points[pick]
        qs = QuerySet(q[:n_tool], q[n_tool:])
        items.append(prepare_input(s.scene, qs, s.instruction, cfg.n_scene, rng))
        gts.append(s.gt_flow.steps[pick] / cfg.flow_scale)
    return TrainBatch(collate(items), np.stack(gts))


def model_gradcheck(cfg: ModelConfig | None = None, seed: int = 0, h: float = 1e-5,
                    max_entries: int | None = None, weights: LossWeights | None = None) -> GradcheckReport:
    """Central differences of ``total_loss`` against the tape gradient for
    every parameter tensor; the diffusion step and noise are frozen by
    re-seeding the loss RNG on every evaluation."""
    cfg = cfg or tiny_config()
    weights = weights or LossWeights()
    model = AffordanceModel(cfg, seed)
    sched = NoiseSchedule.from_config(cfg)
    batch = tiny_batch(cfg, seed)
    params = model.parameters()

    def loss_fn():
        return total_loss(model, batch, sched, weights, seeded_rng(seed, 43)).total

    t0 = time.perf_counter()
    res = gradcheck(loss_fn, params, h=h, max_entries=max_entries, rng=seeded_rng(seed, 47))
    return GradcheckReport(res["max_rel_error"], res["per_param"], res["n_checked"],
                           sum(p.data.size for p in params.values()), time.perf_counter() - t0)
