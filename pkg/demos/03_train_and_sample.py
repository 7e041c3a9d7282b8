"""Train a small flow model and sample from it.

Trains a reduced model on a handful of pickup and open clips for a few
hundred Adam steps (a few minutes on one core), then samples flows for the
training clips and a held-out clip and compares them with ground truth.
A "no motion" prediction is printed as the reference point. ADE relative to
the mean ground-truth step length is about 2 for it, since position error
accumulates over the three steps, and 0 for a perfect model.
Loss curves and trajectory overlays are written as SVG to ``demo_out/``.
"""

import sys
from pathlib import Path

import numpy as np

from affordflow import report
from affordflow.evaluation import predict_samples, relative_ade
from affordflow.model import ModelConfig
from affordflow.synth.dataset import DatasetConfig, build_samples
from affordflow.synth.scenes import HELDOUT_RANGES
from affordflow.training import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400
out = Path("demo_out")
out.mkdir(exist_ok=True)

cfg = DatasetConfig(samples_per_kind={"pickup": 4, "open": 4}, n_queries=64)
samples = build_samples(cfg, seed=0)
held_cfg = DatasetConfig(samples_per_kind={"pickup": 1, "open": 1}, n_queries=64)
held_cfg.ranges = HELDOUT_RANGES
held = build_samples(held_cfg, seed=100_000)

mc = ModelConfig(d=32, d_model=32, d_cond=32, n_scene=128)
tc = TrainConfig(steps=steps, batch_size=8, lr=2e-3, log_path=str(out / "train_log.csv"))
print(f"training {steps} steps on {len(samples)} clips ...")
res = train(samples, mc, tc, seed=0)
first, last = res.records[0], res.records[-1]
print(f"loss {first.total:.4f} -> {last.total:.4f} ({last.seconds:.0f} s)")
report.loss_curves({"demo": res.records}, out / "loss_curves.svg")

zero = [np.zeros_like(s.gt_flow.steps) for s in samples]
print(f"no-motion reference: relative ADE {relative_ade(samples, zero):.3f}")
preds = predict_samples(res.model, samples, seed=0)
print(f"training clips:      relative ADE {relative_ade(samples, preds):.3f}")
held_preds = predict_samples(res.model, held, seed=0)
print(f"held-out clips:      relative ADE {relative_ade(held, held_preds):.3f}")
for i, s in enumerate(held):
    path = out / f"heldout_{i}_{s.instruction.action}.svg"
    report.trajectory_overlay(s.queries.points, held_preds[i], s.gt_flow.steps, path, s.instruction.raw_text)
    print(f"  {s.instruction.raw_text!r} -> {path}")
