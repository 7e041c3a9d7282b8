"""SVG figures (loss curves, trajectory overlays) and CSV summary tables."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .training import TrainRecord  # noqa: E402

# stable element ids and no timestamp, so identical inputs give identical files
matplotlib.rcParams["svg.hashsalt"] = "affordflow"
_META = {"Date": None}


def loss_curves(runs: dict[str, list[TrainRecord]], out) -> Path:
    """One panel per loss component, one line per named run."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.2))
    for ax, comp in zip(axes, ("l_diff", "l_step", "l_acc", "total")):
        for name, recs in runs.items():
            ax.plot([r.epoch for r in recs], [getattr(r, comp) for r in recs], label=name, lw=1)
        ax.set_yscale("log")
        ax.set_title(comp)
        ax.set_xlabel("epoch")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata=_META)
    plt.close(fig)
    return out


def trajectory_overlay(queries: np.ndarray, pred_steps: np.ndarray, gt_steps: np.ndarray, out,
                       title: str = "", max_queries: int = 64) -> Path:
    """Top (x-y) and side (x-z) views of predicted vs ground-truth query tracks."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = min(len(queries), max_queries)
    q = queries[:n]
    tracks = {"gt": np.cumsum(gt_steps[:n], axis=1), "pred": np.cumsum(pred_steps[:n], axis=1)}
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, (i, j, lab) in zip(axes, ((0, 1, "x-y"), (0, 2, "x-z"))):
        ax.scatter(q[:, i], q[:, j], s=4, c="0.5")
        for name, color in (("gt", "tab:green"), ("pred", "tab:red")):
            pts = np.concatenate([q[:, None], q[:, None] + tracks[name]], axis=1)
            for p in pts:
                ax.plot(p[:, i], p[:, j], color=color, lw=0.6, alpha=0.8)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_title(f"{title} {lab}".strip())
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata=_META)
    plt.close(fig)
    return out


def write_table(rows: list[dict], out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []
    with open(out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        wr.writerows(rows)
    return out
