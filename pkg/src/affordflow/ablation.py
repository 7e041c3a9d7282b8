"""Fusion-stage x motion-weighting grid: train per cell and seed, score held-out ADE/FDE."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import flow_report, predict_samples
from .model.config import ModelConfig
from .report import write_table
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)

GRID = (("early", "on"), ("early", "off"), ("late", "on"), ("late", "off"))


@dataclass
class AblationCell:
    fusion: str
    wloss: str
    seeds: list
    ade: list = field(default_factory=list)
    fde: list = field(default_factory=list)

    def row(self, backbone: str) -> dict:
        return {"backbone": backbone, "fusion": self.fusion, "wloss": self.wloss,
                "seeds": " ".join(map(str, self.seeds)),
                "ade_m": float(np.mean(self.ade)), "ade_std_m": float(np.std(self.ade)),
                "fde_m": float(np.mean(self.fde)), "fde_std_m": float(np.std(self.fde))}


def cell_configs(model_cfg: ModelConfig, train_cfg: TrainConfig, fusion: str, wloss: str):
    """Model/train configs for one grid cell; ``wloss off`` sets the weighted share to zero."""
    mc = dataclasses.replace(model_cfg, fusion=fusion)
    w = train_cfg.weights if wloss == "on" else dataclasses.replace(train_cfg.weights, lam=0.0)
    return mc, dataclasses.replace(train_cfg, weights=w)


def backbone_name(cfg: ModelConfig) -> str:
    return f"set-abstraction d={cfg.d} levels={len(cfg.enc_ratios)}"


def run_ablation(train_samples, heldout_samples, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 seeds=(0, 1, 2), grid=GRID, out_dir=None, eval_seed: int = 0) -> list[AblationCell]:
    """Train every (fusion, wloss) cell for every seed and score it on ``heldout_samples``.

    With ``out_dir`` set, each run's checkpoint is stored there and reused
    when present, and ``ablation.csv`` is written.
    """
    cells = []
    for fusion, wloss in grid:
        cell = AblationCell(fusion, wloss, list(seeds))
        mc, tc = cell_configs(model_cfg, train_cfg, fusion, wloss)
        for seed in seeds:
            ckpt = Path(out_dir) / f"{fusion}-{wloss}-seed{seed}" if out_dir else None
            if ckpt is not None and (ckpt / "manifest.json").exists():
                model, _, _ = load_checkpoint(ckpt, mc)
            else:
                log.info("ablation: training fusion=%s wloss=%s seed=%d", fusion, wloss, seed)
                res = train(train_samples, mc, tc, seed)
                model = res.model
                if ckpt is not None:
                    save_checkpoint(ckpt, model, res.optimizer, res.steps_done)
                    model, _, _ = load_checkpoint(ckpt, mc)
            rep = flow_report(heldout_samples, predict_samples(model, heldout_samples, eval_seed))
            cell.ade.append(rep.ade)
            cell.fde.append(rep.fde)
        cells.append(cell)
    if out_dir is not None:
        write_table([c.row(backbone_name(model_cfg)) for c in cells], Path(out_dir) / "ablation.csv")
    return cells
