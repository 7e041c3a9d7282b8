"""Diffusion training objective and the mini-batch Adam loop.

The diffusion variable is the per-step displacement divided by
``ModelConfig.flow_scale``. The step and accumulated-trajectory losses are
computed on the one-step clean reconstruction in the same normalized units,
with the Huber threshold converted from meters accordingly.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .model.config import ModelConfig
from .model.network import AffordanceModel, ModelInput
from .model.pipeline import collate, prepare_input
from .model.schedule import NoiseSchedule, q_sample
from .numerics import autograd as ag
from .numerics.autograd import Graph, Tensor, backward
from .numerics.optim import OptimizerState, adam_step, clip_grad_norm, zero_grad
from .numerics.rng import seeded_rng

log = logging.getLogger(__name__)


class LossError(FloatingPointError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, records: list, dump_path: Path | None = None):
        super().__init__(msg)
        self.records = records
        self.dump_path = dump_path


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.5  # share of the motion-weighted term in L_acc
    diff: float = 1.0
    step: float = 0.1
    acc: float = 0.1
    huber_delta: float = 0.01  # meters
    w_floor: float = 1e-3  # meters, g(x) = x + w_floor


# ---------------------------------------------------------------- components


def _per_sample_mean(x: Tensor) -> Tensor:
    """Mean over every axis but the first."""
    B = x.shape[0]
    return ag.mean(ag.reshape(x, (B, -1)), axis=1)


def loss_diff(eps_hat, eps, k, schedule: NoiseSchedule, reduce: bool = True):
    """min-SNR weighted noise-prediction MSE; ``k`` holds one step per sample (leading axis)."""
    eps_hat = ag.as_tensor(eps_hat)
    if eps_hat.shape != np.shape(eps):
        raise ValueError(f"loss_diff: shapes {eps_hat.shape} and {np.shape(eps)} differ")
    per = _per_sample_mean(ag.square(eps_hat - eps)) * schedule.at(k, "min_snr_weight")
    return ag.mean(per) if reduce else per


def motion_weights(steps: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """``floor + mean_t |step_t|`` per query, for steps shaped (..., m, 3)."""
    return floor + np.linalg.norm(steps, axis=-1).mean(axis=-1)


def loss_step(pred_steps, gt_steps, reduce: bool = True):
    """Sum over steps of squared step residual norms, averaged over queries.

    Inputs are (Nq, m, 3) or batched (B, Nq, m, 3); batched input averages
    the per-sample values when ``reduce``.
    """
    pred_steps = ag.as_tensor(pred_steps)
    if pred_steps.shape != np.shape(gt_steps):
        raise ValueError(f"loss_step: shapes {pred_steps.shape} and {np.shape(gt_steps)} differ")
    r = ag.sum_(ag.square(pred_steps - gt_steps), axis=(-2, -1))  # (..., Nq)
    per = ag.mean(r, axis=-1)
    return ag.mean(per) if reduce else per


def loss_acc(s_hat, s, w, lam: float = 0.5, delta: float = 0.01, reduce: bool = True):
    """Blend of plain and ``w``-weighted means of per-query Huber residuals.

    ``s_hat``/``s`` are trajectories relative to the start, (..., Nq, m, 3);
    ``w`` is (..., Nq) and is normalized within each sample.
    """
    s_hat = ag.as_tensor(s_hat)
    if s_hat.shape != np.shape(s):
        raise ValueError(f"loss_acc: shapes {s_hat.shape} and {np.shape(s)} differ")
    w = np.asarray(w, dtype=np.float64)
    if np.any(w.sum(axis=-1) <= 0):
        raise ValueError("loss_acc: weights must have a positive sum")
    r = ag.sum_(ag.huber(s_hat - s, delta), axis=(-2, -1))  # (..., Nq)
    plain = ag.mean(r, axis=-1)
    weighted = ag.sum_(r * (w / w.sum(axis=-1, keepdims=True)), axis=-1)
    per = plain * (1.0 - lam) + weighted * lam
    return ag.mean(per) if reduce else per


# ---------------------------------------------------------------- objective


@dataclass
class TrainBatch:
    inputs: ModelInput
    gt: np.ndarray  # normalized steps, (B, Nq, m, 3)
    loss_index: np.ndarray | None = None  # (B, n) queries that enter the loss


@dataclass
class LossOutput:
    total: Tensor
    components: dict
    k: np.ndarray
    eps: np.ndarray
    eps_hat: np.ndarray


def aux_weight(k, schedule: NoiseSchedule) -> np.ndarray:
    """min(SNR, gamma) / gamma: damps the reconstruction losses where x0 estimates are noisy."""
    s = schedule.at(k, "snr")
    return np.minimum(s, schedule.gamma) / schedule.gamma


def total_loss(model: AffordanceModel, batch: TrainBatch, schedule: NoiseSchedule,
               weights: LossWeights, rng: np.random.Generator,
               eps_hook: Callable | None = None) -> LossOutput:
    """Draw k and noise, denoise, and combine the three loss terms.

    ``eps_hook(eps, k)`` replaces the network's noise prediction when given;
    tests use it to inject a perfect denoiser.
    """
    cfg = model.cfg
    gt = batch.gt
    B = gt.shape[0]
    cond = None if eps_hook is not None else model.condition(batch.inputs)
    if batch.loss_index is not None:
        gt = np.take_along_axis(gt, batch.loss_index[:, :, None, None], axis=1)
    Nq = gt.shape[1]
    k = rng.integers(1, schedule.K + 1, size=B)
    eps = rng.standard_normal(gt.shape)
    x_k = q_sample(gt, k, eps, schedule)
    if eps_hook is not None:
        eps_hat = ag.Tensor(eps_hook(eps, k))
    else:
        c = cond.c_cond
        if batch.loss_index is not None:
            flat = batch.loss_index + (np.arange(B) * batch.inputs.n_query)[:, None]
            c = ag.take_rows(ag.reshape(c, (-1, cfg.d_model)), flat)
        eps_hat = model.denoise(x_k.reshape(B * Nq, cfg.m, 3), np.repeat(k, Nq),
                                ag.reshape(c, (B * Nq, cfg.d_model)))
        eps_hat = ag.reshape(eps_hat, gt.shape)

    l_diff = loss_diff(eps_hat, eps, k, schedule)
    ab = schedule.at(k).reshape(B, 1, 1, 1)
    x0 = (ag.Tensor(x_k) - eps_hat * np.sqrt(1.0 - ab)) * (1.0 / np.sqrt(ab))
    aux = aux_weight(k, schedule)
    l_step = ag.mean(loss_step(x0, gt, reduce=False) * aux)
    w = motion_weights(gt * cfg.flow_scale, weights.w_floor)
    l_acc = ag.mean(loss_acc(ag.cumsum(x0, axis=2), np.cumsum(gt, axis=2), w, weights.lam,
                             weights.huber_delta / cfg.flow_scale, reduce=False) * aux)
    comps = {"l_diff": l_diff, "l_step": l_step, "l_acc": l_acc}
    for name, val in comps.items():
        if not np.isfinite(val.data):
            raise LossError(f"{name} is not finite")
    total = l_diff * weights.diff + l_step * weights.step + l_acc * weights.acc
    return LossOutput(total, {n: float(v.data) for n, v in comps.items()}, k, eps, eps_hat.data)


# ---------------------------------------------------------------- batches


def sample_arrays(samples, cfg: ModelConfig) -> list[np.ndarray]:
    """Normalized ground-truth steps for each sample."""
    return [s.gt_flow.steps / cfg.flow_scale for s in samples]


def make_batch(samples, gts, idx, cfg: ModelConfig, rng, loss_queries: int | None = None) -> TrainBatch:
    items = [prepare_input(samples[i].scene, samples[i].queries, samples[i].instruction, cfg.n_scene, rng)
             for i in idx]
    gt = np.stack([gts[i] for i in idx])
    loss_index = None
    if loss_queries is not None and loss_queries < gt.shape[1]:
        loss_index = np.stack([np.sort(rng.choice(gt.shape[1], loss_queries, replace=False)) for _ in idx])
    return TrainBatch(collate(items), gt, loss_index)


# ---------------------------------------------------------------- loop


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    warmup: int = 0
    decay: str = "constant"  # or "cosine": anneal from lr to lr_final over the post-warmup steps
    lr_final: float = 0.0
    clip_norm: float = 1.0
    loss_queries: int | None = None  # subsample queries per sample for the denoiser loss
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None
    divergence_factor: float = 10.0
    divergence_window: int = 50
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.decay not in ("constant", "cosine"):
            raise ValueError(f"unknown learning-rate decay {self.decay!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class TrainRecord:
    epoch: int
    l_diff: float
    l_step: float
    l_acc: float
    total: float
    grad_norm: float
    lr: float
    seconds: float

    def losses(self) -> tuple:
        return (self.l_diff, self.l_step, self.l_acc, self.total, self.grad_norm)


RECORD_FIELDS = [f.name for f in fields(TrainRecord)]


def write_records(path, records: list[TrainRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(RECORD_FIELDS)
        for r in records:
            wr.writerow([r.epoch] + [repr(float(getattr(r, n))) for n in RECORD_FIELDS[1:]])
    return path


def read_records(path) -> list[TrainRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [TrainRecord(int(r["epoch"]), *(float(r[n]) for n in RECORD_FIELDS[1:])) for r in rows]


class PlateauStop:
    """Early-stop hook: stop once the epoch total has not improved by
    ``min_delta`` (relative) for ``patience`` epochs."""

    def __init__(self, patience: int, min_delta: float = 1e-3):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.stale = 0

    def __call__(self, records: list[TrainRecord]) -> bool:
        cur = records[-1].total
        if cur < self.best * (1.0 - self.min_delta):
            self.best = cur
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainResult:
    model: AffordanceModel
    records: list
    optimizer: OptimizerState
    steps_done: int
    stopped_early: bool = False
    checkpoints: list = field(default_factory=list)


def _lr_at(step: int, tc: TrainConfig) -> float:
    if tc.warmup > 0 and step < tc.warmup:
        return tc.lr * (step + 1) / tc.warmup
    if tc.decay == "cosine":
        frac = (step - tc.warmup) / max(tc.steps - tc.warmup, 1)
        return tc.lr_final + 0.5 * (tc.lr - tc.lr_final) * (1.0 + math.cos(math.pi * frac))
    return tc.lr


def train(samples: list, model_cfg: ModelConfig, tc: TrainConfig, seed: int = 0,
          early_stop: Callable[[list], bool] | None = None,
          model: AffordanceModel | None = None) -> TrainResult:
    """Mini-batch Adam on ``total_loss``. Batches follow a seeded permutation
    per epoch and are consumed in order, so a seed fixes the whole run."""
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    model = model if model is not None else AffordanceModel(model_cfg, seed)
    sched = NoiseSchedule.from_config(model_cfg)
    params = model.parameters()
    opt = OptimizerState(lr=tc.lr)
    gts = sample_arrays(samples, model_cfg)
    rng = seeded_rng(seed, 11)
    bs = min(tc.batch_size, len(samples))
    per_epoch = len(samples) // bs
    records: list[TrainRecord] = []
    acc = np.zeros(5)
    n_acc = 0
    t0 = time.perf_counter()
    initial = None
    over = 0
    ckpts = []
    step = 0
    stopped = False
    order = np.arange(0)
    while step < tc.steps:
        pos = step % per_epoch
        if pos == 0:
            order = rng.permutation(len(samples))
        batch = make_batch(samples, gts, order[pos * bs:(pos + 1) * bs], model_cfg, rng, tc.loss_queries)
        opt.lr = _lr_at(step, tc)
        zero_grad(params)
        with Graph() as g:
            out = total_loss(model, batch, sched, tc.weights, rng)
            backward(out.total, g)
        gnorm = clip_grad_norm(params, tc.clip_norm)
        adam_step(params, opt)
        total = float(out.total.data)
        c = out.components
        acc += (c["l_diff"], c["l_step"], c["l_acc"], total, gnorm)
        n_acc += 1
        step += 1

        initial = total if initial is None else initial
        over = over + 1 if total > tc.divergence_factor * initial else 0
        if over >= tc.divergence_window:
            records.append(_record(step // per_epoch, acc / n_acc, opt.lr, t0))
            dump = None
            if tc.log_path:
                dump = write_records(Path(tc.log_path).with_suffix(".diverged.csv"), records)
            raise DivergenceError(f"loss above {tc.divergence_factor}x its initial value for "
                                  f"{tc.divergence_window} consecutive steps (step {step})", records, dump)

        if step % per_epoch == 0:
            records.append(_record(step // per_epoch, acc / n_acc, opt.lr, t0))
            acc[:] = 0
            n_acc = 0
            if early_stop is not None and early_stop(records):
                stopped = True
        if tc.checkpoint_every and tc.checkpoint_dir and step % tc.checkpoint_every == 0:
            ckpts.append(save_checkpoint(Path(tc.checkpoint_dir) / f"step{step:06d}", model, opt, step))
        if stopped:
            break
    if n_acc:
        records.append(_record(math.ceil(step / per_epoch), acc / n_acc, opt.lr, t0))
    if tc.log_path:
        write_records(tc.log_path, records)
    return TrainResult(model, records, opt, step, stopped, ckpts)


def _record(epoch: int, means: np.ndarray, lr: float, t0: float) -> TrainRecord:
    return TrainRecord(int(epoch), *map(float, means[:4]), float(means[4]), float(lr),
                       time.perf_counter() - t0)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model: AffordanceModel, opt: OptimizerState | None = None, step: int = 0,
                    extra: dict | None = None) -> Path:
    """Parameters (and Adam moments, if given) as 32-bit blobs; the model
    config travels in the manifest header."""
    records = [{"name": f"param/{n}", "meta": {}, "arrays": {"value": p.data}}
               for n, p in model.parameters().items()]
    header = {"kind": "checkpoint", "model_config": model.cfg.to_dict(), "step": int(step),
              "extra": extra or {}}
    if opt is not None:
        header["optimizer"] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                               "eps": opt.eps, "step": opt.step}
        for n in opt.m:
            records.append({"name": f"adam/{n}", "meta": {},
                            "arrays": {"m": opt.m[n], "v": opt.v[n]}})
    return io.write_container(path, records, header)


def load_checkpoint(path, expected_cfg: ModelConfig | None = None):
    """Return ``(model, optimizer_state_or_None, header)``.

    Refuses to load when the stored config differs from ``expected_cfg`` or
    when parameter names/shapes do not match the architecture.
    """
    header, records = io.read_container(path)
    if header.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint container")
    cfg = ModelConfig.from_dict(header["model_config"])
    if expected_cfg is not None and cfg != expected_cfg:
        diff = sorted(k for k, v in expected_cfg.to_dict().items() if cfg.to_dict().get(k) != v)
        raise CheckpointError(f"checkpoint config differs from the expected one in: {diff}")
    model = AffordanceModel(cfg, 0)
    params = model.parameters()
    stored = {r["name"][6:]: r["arrays"]["value"] for r in records if r["name"].startswith("param/")}
    if set(stored) != set(params):
        raise CheckpointError(f"parameter names differ: missing {sorted(set(params) - set(stored))}, "
                              f"unexpected {sorted(set(stored) - set(params))}")
    for n, p in params.items():
        if stored[n].shape != p.data.shape:
            raise CheckpointError(f"parameter {n!r}: stored shape {stored[n].shape}, expected {p.data.shape}")
        p.data = stored[n].astype(np.float64)
    opt = None
    if "optimizer" in header:
        o = header["optimizer"]
        opt = OptimizerState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"])
        opt.step = o["step"]
        for r in records:
            if r["name"].startswith("adam/"):
                opt.m[r["name"][5:]] = r["arrays"]["m"].astype(np.float64)
                opt.v[r["name"][5:]] = r["arrays"]["v"].astype(np.float64)
    return model, opt, header
