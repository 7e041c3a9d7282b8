"""Batch prediction over datasets and the metric reports built from it."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import io
from .metrics import ade_fde_steps, mean_step_norm
from .model.network import AffordanceModel
from .model.pipeline import collate, prepare_input, sample_flow
from .numerics.rng import seeded_rng
from .synth.dataset import moving_hinge_distances


def predict_samples(model: AffordanceModel, samples, seed: int = 0, batch_size: int = 8) -> list[np.ndarray]:
    """Sampled steps (meters) for every sample, in input order.

    Batches only mix samples with equal query counts; one RNG stream per
    call keeps the output a function of ``seed``.
    """
    rng = seeded_rng(seed, 31)
    out: list = [None] * len(samples)
    groups = defaultdict(list)
    for i, s in enumerate(samples):
        groups[s.n_queries].append(i)
    for _, idx in sorted(groups.items()):
        for lo in range(0, len(idx), batch_size):
            chunk = idx[lo:lo + batch_size]
            items = [prepare_input(samples[i].scene, samples[i].queries, samples[i].instruction,
                                   model.cfg.n_scene, rng) for i in chunk]
            pred = sample_flow(model, collate(items), rng)
            for j, i in enumerate(chunk):
                out[i] = pred[j]
    return out


@dataclass
class MetricReport:
    per_task: dict = field(default_factory=dict)  # kind -> {ade, fde, n, mean_step}
    success: dict = field(default_factory=dict)  # kind -> [k, n]
    mode: str = "dataset"
    seeds: list = field(default_factory=list)
    config_hash: str = ""

    @property
    def ade(self) -> float:
        n = sum(v["n"] for v in self.per_task.values())
        return sum(v["ade"] * v["n"] for v in self.per_task.values()) / max(n, 1)

    @property
    def fde(self) -> float:
        n = sum(v["n"] for v in self.per_task.values())
        return sum(v["fde"] * v["n"] for v in self.per_task.values()) / max(n, 1)

    def to_dict(self) -> dict:
        return {"per_task": self.per_task, "success": self.success, "mode": self.mode,
                "seeds": list(self.seeds), "config_hash": self.config_hash,
                "ade": self.ade, "fde": self.fde}

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["task", "ade_m", "fde_m", "n", "successes", "trials", "mode", "config_hash"])
            kinds = sorted(set(self.per_task) | set(self.success))
            for k in kinds:
                t = self.per_task.get(k, {})
                s = self.success.get(k, ["", ""])
                wr.writerow([k, t.get("ade", ""), t.get("fde", ""), t.get("n", ""), s[0], s[1],
                             self.mode, self.config_hash])
        return path


def flow_report(samples, preds, gts=None, config_hash: str = "", seeds=()) -> MetricReport:
    """Per-task ADE/FDE of ``preds`` against ``gts`` (default: the samples' ground truth)."""
    by_kind = defaultdict(list)
    for i, s in enumerate(samples):
        gt = s.gt_flow.steps if gts is None else gts[i]
        by_kind[s.instruction.action].append((preds[i], gt))
    rep = MetricReport(mode="dataset", seeds=list(seeds), config_hash=config_hash)
    for kind, pairs in sorted(by_kind.items()):
        errs = [ade_fde_steps(p, g) for p, g in pairs]
        rep.per_task[kind] = {"ade": float(np.mean([e[0] for e in errs])),
                              "fde": float(np.mean([e[1] for e in errs])), "n": len(pairs),
                              "mean_step": float(np.mean([mean_step_norm(g) for _, g in pairs]))}
    return rep


def rollout_report(rows: list[dict], config_hash: str = "") -> MetricReport:
    """Success counts (and mean prediction ADE where logged) from rollout log rows."""
    rep = MetricReport(mode=",".join(sorted({r["mode"] for r in rows})), config_hash=config_hash,
                       seeds=sorted({r["seed"] for r in rows}))
    by_kind = defaultdict(list)
    for r in rows:
        by_kind[r["task"]].append(r)
    for kind, rs in sorted(by_kind.items()):
        rep.success[kind] = [sum(bool(r["success"]) for r in rs), len(rs)]
        ades = [a for r in rs for a in r.get("pred_ade", [])]
        if ades:
            rep.per_task[kind] = {"ade": float(np.mean(ades)), "fde": float("nan"), "n": len(ades),
                                  "mean_step": float("nan")}
    return rep


def relative_ade(samples, preds) -> float:
    """Mean ADE divided by the mean ground-truth step norm over the same samples."""
    ade = np.mean([ade_fde_steps(p, s.gt_flow.steps)[0] for p, s in zip(preds, samples)])
    return float(ade / np.mean([mean_step_norm(s.gt_flow.steps) for s in samples]))


def hinge_rank_correlation(samples, preds) -> tuple[float, int]:
    """Spearman correlation between predicted mean step length and distance
    from the hinge axis, pooled over hinge clips.

    Uses the object's own queries on the moving part. Gripper queries are
    left out: they ride along at roughly one radius (the handle), so they
    carry no information about how motion grows with distance."""
    dist, mag = [], []
    for s, p in zip(samples, preds):
        if "hinge_axis" not in s.meta:
            continue
        d, moving = moving_hinge_distances(s)
        keep = moving & (s.queries.role_mask == 0)
        dist.append(d[keep])
        mag.append(np.linalg.norm(p, axis=-1).mean(axis=-1)[keep])
    if not dist:
        raise ValueError("no hinge samples to evaluate")
    d, g = np.concatenate(dist), np.concatenate(mag)
    return float(spearmanr(d, g).statistic), len(d)


# ---------------------------------------------------------------- prediction containers


def write_predictions(path, samples, preds, header: dict | None = None) -> Path:
    records = [{"name": f"sample-{i:06d}", "meta": {"kind": s.instruction.action},
                "arrays": {"pred_flow": p, "gt_flow": s.gt_flow.steps}}
               for i, (s, p) in enumerate(zip(samples, preds))]
    hdr = {"kind": "predictions"}
    hdr.update(header or {})
    return io.write_container(path, records, hdr)


def read_flows(path) -> tuple[list[str], list[np.ndarray], list[str]]:
    """(names, flows, kinds) from either a prediction or a dataset container.

    Prediction containers yield their predicted flow; dataset containers
    their ground truth.
    """
    header, records = io.read_container(path)
    key = "pred_flow" if header.get("kind") == "predictions" else "gt_flow"
    kinds = [r["meta"].get("kind", r["meta"].get("instruction", {}).get("action", "?")) for r in records]
    return [r["name"] for r in records], [r["arrays"][key].astype(np.float64) for r in records], kinds


def compare_containers(pred_path, gt_path) -> MetricReport:
    names_p, flows_p, _ = read_flows(pred_path)
    names_g, flows_g, kinds = read_flows(gt_path)
    if names_p != names_g:
        raise ValueError(f"containers hold different records ({len(names_p)} vs {len(names_g)})")
    by_kind = defaultdict(list)
    for p, g, k in zip(flows_p, flows_g, kinds):
        by_kind[k].append(ade_fde_steps(p, g))
    rep = MetricReport(mode="dataset")
    for k, errs in sorted(by_kind.items()):
        rep.per_task[k] = {"ade": float(np.mean([e[0] for e in errs])),
                           "fde": float(np.mean([e[1] for e in errs])), "n": len(errs),
                           "mean_step": float("nan")}
    return rep
