"""Acceptance criteria, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v``; one pass/fail line per
criterion is printed in the "acceptance criteria" summary section. Trained
models are cached (see ``acceptance_runs.py``); a cold run trains them all.
"""

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_runs import cached_run, dataset
from affordflow import io
from affordflow.cli import main as cli_main
from affordflow.evaluation import hinge_rank_correlation, predict_samples, relative_ade
from affordflow.geometry import RigidTransform, fit_rigid
from affordflow.gradients import model_gradcheck
from affordflow.grounding import GroundingError, GroundingRequest, ground, unique_registry
from affordflow.metrics import ade_fde
from affordflow.model import AffordanceModel, ModelConfig, NoiseSchedule, tiny_config
from affordflow.numerics.rng import seeded_rng
from affordflow.sim import RolloutConfig, SimWorld, run_rollout, task_from_setup
from affordflow.synth.dataset import DatasetConfig, generate_sample, read_dataset, write_dataset
from affordflow.synth.motion import AFFORDANCES
from affordflow.synth.scenes import TRAIN_RANGES, generate_scene, scene_cloud
from affordflow.training import (
    LossWeights,
    TrainConfig,
    load_checkpoint,
    loss_acc,
    loss_diff,
    loss_step,
    motion_weights,
    save_checkpoint,
)

from conftest import random_rotation

# ---------------------------------------------------------------- shared runs

OVERFIT_KINDS = ("pickup", "place", "open", "close", "pour", "cut", "push", "pull")
OVERFIT_TRAIN = TrainConfig(steps=5000, batch_size=8, lr=1e-3, loss_queries=32, decay="cosine", lr_final=1e-5)
OVERFIT_EVAL_EVERY = 250

GENERAL_TRAIN = TrainConfig(steps=12000, batch_size=8, lr=1e-3, loss_queries=32, decay="cosine", lr_final=1e-5)
GENERAL_PER_KIND = 50  # 10 kinds x 50 = 500 clips
HELDOUT_PER_KIND = 3

ABLATION_KINDS = ("open", "close")
ABLATION_PER_KIND = 20
ABLATION_HELDOUT = 5
ABLATION_TRAIN = TrainConfig(steps=2000, batch_size=8, lr=1e-3, loss_queries=32, decay="cosine", lr_final=1e-5)
ABLATION_SEEDS = (0, 1, 2)


class OverfitMonitor:
    """Early-stop hook: sample the training clips every few hundred steps
    and stop once the ADE ratio is below the target."""

    def __init__(self, model, samples, every, target):
        self.model, self.samples, self.every, self.target = model, samples, every, target
        # checkpoints store 32-bit weights; judge the copy the test will reload
        self.stored = AffordanceModel(model.cfg, 0)
        self.history = []

    def __call__(self, records) -> bool:
        step = records[-1].epoch  # one batch per epoch with 8 clips and batch size 8
        if step % self.every:
            return False
        live, stored = self.model.parameters(), self.stored.parameters()
        for n, p in live.items():
            stored[n].data = p.data.astype(np.float32).astype(np.float64)
        ratio = relative_ade(self.samples, predict_samples(self.stored, self.samples, seed=0))
        self.history.append([step, ratio])
        return ratio < self.target


def overfit_samples():
    return [generate_sample(k, 0, i, DatasetConfig()) for i, k in enumerate(OVERFIT_KINDS)]


@pytest.fixture(scope="module")
def general_model():
    recipe = {"kinds": list(AFFORDANCES), "per_kind": GENERAL_PER_KIND, "seed": 0}
    return cached_run("general", recipe, lambda: dataset(AFFORDANCES, GENERAL_PER_KIND, 0), ModelConfig(),
                      GENERAL_TRAIN, seed=0)


@pytest.fixture(scope="module")
def heldout():
    return dataset(AFFORDANCES, HELDOUT_PER_KIND, 0, heldout=True)


# ---------------------------------------------------------------- 1


@pytest.mark.criterion(1, "full-model gradient check (tiny config, 64-bit)")
def test_c1_gradient_check(record_property):
    cfg = tiny_config()
    assert (cfg.n_scene, cfg.d, cfg.K, cfg.m) == (32, 16, 10, 3)
    rep = model_gradcheck(cfg, seed=0, h=1e-5)
    record_property("detail", f"max rel err {rep.max_rel_error:.2e} over {rep.n_checked}/{rep.n_params} "
                              f"entries in {rep.seconds:.0f} s (limits 1e-4, 120 s)")
    assert rep.n_checked == rep.n_params
    assert rep.max_rel_error < 1e-4
    assert rep.seconds < 120


# ---------------------------------------------------------------- 2


@pytest.mark.criterion(2, "rigid-fit oracle (1000 pairs, noiseless and sigma=1e-3)")
def test_c2_rigid_fit_oracle(record_property):
    t0 = time.perf_counter()
    rng = seeded_rng(2024)
    worst_rot = worst_trans = 0.0
    noisy_ok = 0
    n = 1000
    for _ in range(n):
        R = random_rotation(rng)
        t = rng.uniform(-0.5, 0.5, 3)
        npts = int(rng.integers(10, 101))
        spread = rng.uniform(0.05, 0.2)
        src = rng.normal(size=(npts, 3)) * spread
        dst = src @ R.T + t
        T = RigidTransform(R, t)
        est = fit_rigid(src, dst)
        worst_rot = max(worst_rot, RigidTransform(est.rotation @ R.T, np.zeros(3)).angle())
        worst_trans = max(worst_trans, float(np.linalg.norm(est.translation - t)))
        est_n = fit_rigid(src, dst + rng.normal(0, 1e-3, dst.shape))
        rot_err = np.rad2deg(RigidTransform(est_n.rotation @ R.T, np.zeros(3)).angle())
        noisy_ok += rot_err <= 0.5 and np.linalg.norm(est_n.translation - T.translation) <= 2e-3
    seconds = time.perf_counter() - t0
    record_property("detail", f"noiseless worst {worst_rot:.1e} rad / {worst_trans:.1e} m; noisy within "
                              f"0.5 deg / 2 mm on {noisy_ok}/{n}; {seconds:.1f} s")
    assert worst_rot < 1e-7
    assert worst_trans < 1e-9
    assert noisy_ok >= 0.99 * n
    assert seconds < 30


# ---------------------------------------------------------------- 3


def _brute_step(p, g):
    return sum(sum((p[i, t, c] - g[i, t, c]) ** 2 for t in range(p.shape[1]) for c in range(3))
               for i in range(p.shape[0])) / p.shape[0]


@pytest.mark.criterion(3, "loss identities and brute-force equivalence")
def test_c3_loss_identities(record_property):
    rng = seeded_rng(3)
    sched = NoiseSchedule.linear(100, 1e-3, 0.2, 5.0)
    gt = rng.normal(size=(3, 10, 3, 3)) * 0.02
    gt[:, 5:] = 0.0  # static queries
    eps = rng.normal(size=gt.shape)
    k = np.array([1, 50, 100])
    w = motion_weights(gt)
    zeros = [float(loss_diff(eps, eps, k, sched).data), float(loss_step(gt, gt).data),
             float(loss_acc(gt.cumsum(2), gt.cumsum(2), w).data)]
    assert zeros == [0.0, 0.0, 0.0]

    s_hat = gt.cumsum(2) + rng.normal(size=gt.shape) * 0.01
    lam0 = float(loss_acc(s_hat, gt.cumsum(2), w, lam=0.0).data)
    plain = float(loss_acc(s_hat, gt.cumsum(2), np.ones(w.shape), lam=1.0).data)
    assert abs(lam0 - plain) < 1e-12

    snr = sched.snr
    clamp_err = float(np.max(np.abs(sched.min_snr_weight - np.minimum(snr, 5.0) / snr)))
    assert clamp_err == 0.0

    p = rng.normal(size=(7, 3, 3))
    g = rng.normal(size=(7, 3, 3))
    step_err = abs(float(loss_step(p, g).data) - _brute_step(p, g))
    assert step_err < 1e-12

    P = np.cumsum(p, 1)
    G = np.cumsum(g, 1)
    errs = [[np.sqrt(sum((P[i, t, c] - G[i, t, c]) ** 2 for c in range(3))) for t in range(3)] for i in range(7)]
    ade_ref = sum(sum(r) for r in errs) / 21
    fde_ref = sum(r[-1] for r in errs) / 7
    ade, fde = ade_fde(P, G)
    metric_err = max(abs(ade - ade_ref), abs(fde - fde_ref))
    assert metric_err < 1e-12
    record_property("detail", f"zeros {zeros}; lambda=0 diff {abs(lam0 - plain):.1e}; clamp max diff "
                              f"{clamp_err:.1e}; L_step {step_err:.1e}; ADE/FDE {metric_err:.1e}")


# ---------------------------------------------------------------- 4


@pytest.mark.criterion(4, "overfit 8 clips: ADE < 0.1 x mean step norm within 5000 steps, <= 1 h")
def test_c4_overfit(record_property):
    samples = overfit_samples()
    recipe = {"overfit": list(OVERFIT_KINDS), "eval_every": OVERFIT_EVAL_EVERY}
    model, summary = cached_run(
        "overfit", recipe, lambda: samples, ModelConfig(), OVERFIT_TRAIN, seed=0,
        early_stop_fn=lambda m: OverfitMonitor(m, samples, OVERFIT_EVAL_EVERY, 0.1))
    ratio = relative_ade(samples, predict_samples(model, samples, seed=0))
    record_property("detail", f"ratio {ratio:.4f} after {summary['steps']} steps, "
                              f"{summary['train_seconds'] / 60:.1f} min; history {summary['history']}")
    assert summary["steps"] <= 5000
    assert ratio < 0.1
    assert summary["train_seconds"] <= 3600


# ---------------------------------------------------------------- 5


@pytest.mark.criterion(5, "generalization: held-out ADE < 0.3 x mean step norm (500 training clips)")
def test_c5_generalization(general_model, heldout, record_property):
    model, summary = general_model
    preds = predict_samples(model, heldout, seed=0)
    ratio = relative_ade(heldout, preds)
    per_kind = {}
    for s, p in zip(heldout, preds):
        per_kind.setdefault(s.instruction.action, []).append((s, p))
    kinds = {k: round(relative_ade([a for a, _ in v], [b for _, b in v]), 3) for k, v in per_kind.items()}
    record_property("detail", f"ratio {ratio:.4f} on {len(heldout)} held-out clips "
                              f"({summary['steps']} steps); per kind {kinds}")
    assert ratio < 0.3


# ---------------------------------------------------------------- 6


@pytest.mark.criterion(6, "hinge geometry: Spearman(step length, hinge distance) > 0.8")
def test_c6_hinge_rank(general_model, record_property):
    model, _ = general_model
    samples = dataset(("open", "close"), 10, 0, heldout=True)
    rho, n = hinge_rank_correlation(samples, predict_samples(model, samples, seed=0))
    record_property("detail", f"Spearman {rho:.3f} over {n} moving object queries of {len(samples)} held-out clips")
    assert rho > 0.8


# ---------------------------------------------------------------- 7


@pytest.mark.criterion(7, "ablation: weighted-loss ADE <= unweighted ADE on open/close, 3 seeds")
def test_c7_ablation_direction(record_property):
    train_recipe = {"kinds": list(ABLATION_KINDS), "per_kind": ABLATION_PER_KIND, "seed": 0}
    held = dataset(ABLATION_KINDS, ABLATION_HELDOUT, 0, heldout=True)
    ade = {"on": [], "off": []}
    for wloss, lam in (("on", 0.5), ("off", 0.0)):
        tc = TrainConfig(**{**ABLATION_TRAIN.to_dict(), "weights": LossWeights(lam=lam)})
        for seed in ABLATION_SEEDS:
            model, _ = cached_run(f"ablation-{wloss}", train_recipe,
                                  lambda: dataset(ABLATION_KINDS, ABLATION_PER_KIND, 0), ModelConfig(), tc, seed)
            preds = predict_samples(model, held, seed=0)
            ade[wloss].append(float(np.mean([ade_fde(np.cumsum(p, 1), s.gt_flow.trajectories())[0]
                                             for p, s in zip(preds, held)])))
    on, off = np.mean(ade["on"]), np.mean(ade["off"])
    record_property("detail", f"mean ADE with weighting {on * 1000:.3f} mm vs without {off * 1000:.3f} mm; "
                              f"per seed on {np.round(np.array(ade['on']) * 1000, 3).tolist()} "
                              f"off {np.round(np.array(ade['off']) * 1000, 3).tolist()}")
    assert on <= off


# ---------------------------------------------------------------- 8


def _rollouts(kind, seeds, model, mode, cfg=None, ranges=TRAIN_RANGES):
    out = []
    for seed in seeds:
        setup = generate_scene(kind, seeded_rng(seed, 53), ranges)
        out.append(run_rollout(task_from_setup(setup), SimWorld.from_setup(setup), model, mode, seed,
                               cfg or RolloutConfig()))
    return out


@pytest.mark.criterion(8, "simulator: oracle 10/10 per kind; closed-loop pickup >= 8/10; closed >= open")
def test_c8_executability(general_model, record_property):
    model, _ = general_model
    oracle = {k: sum(r.success for r in _rollouts(k, range(10), None, "oracle")) for k in AFFORDANCES}
    pickup = _rollouts("pickup", range(100, 110), model, "closed_loop")
    n_pick = sum(r.success for r in pickup)
    noisy = RolloutConfig(obs_noise=0.003)
    seeds = range(200, 220)
    closed = sum(r.success for r in _rollouts("pickup", seeds, model, "closed_loop", noisy))
    opened = sum(r.success for r in _rollouts("pickup", seeds, model, "open_loop", noisy))
    record_property("detail", f"oracle {oracle}; closed-loop pickup {n_pick}/10; under 3 mm observation noise "
                              f"closed {closed}/20 vs open {opened}/20")
    assert all(v == 10 for v in oracle.values())
    assert n_pick >= 8
    assert closed >= opened


# ---------------------------------------------------------------- 9


@pytest.mark.criterion(9, "grounding contract: first-pass / one recovery / two-attempt failure")
def test_c9_grounding_contract(record_property):
    outcomes = {"present": [], "absent-handle": [], "absent-object": []}
    max_attempts = 0
    for kind in ("open", "close"):
        for seed in range(5):
            for case in outcomes:
                setup = generate_scene(kind, seeded_rng(seed, 61), with_handle=case != "absent-handle")
                reg = unique_registry(setup.registry)
                cloud = scene_cloud(reg, setup.executor_id)
                if case == "absent-object":
                    cloud = cloud.subset(cloud.labels[:, 0] != setup.target_id)
                req = GroundingRequest(setup.instruction.raw_text, cloud, reg, setup.executor_id)
                try:
                    g = ground(req)
                    outcomes[case].append("recovered" if g.recovery_used else "first-pass")
                    attempts = g.attempts
                except GroundingError as exc:
                    outcomes[case].append(f"failed-{exc.attempts['target']}")
                    attempts = exc.attempts
                max_attempts = max(max_attempts, *attempts.values())
    summary = {k: sorted(set(v)) for k, v in outcomes.items()}
    record_property("detail", f"{summary}; max attempts per role {max_attempts}")
    assert set(outcomes["present"]) == {"first-pass"}
    assert set(outcomes["absent-handle"]) == {"recovered"}
    assert set(outcomes["absent-object"]) == {"failed-2"}
    assert max_attempts <= 2


# ---------------------------------------------------------------- 10

DETERMINISM_CONFIG = """\
data.kinds = pickup, open, pour
data.samples_per_kind = 2
data.heldout_per_kind = 1
data.n_queries = 64
model.d = 32
model.d_model = 32
model.K = 20
model.n_scene = 128
train.steps = 6
train.batch_size = 2
run.eval_seeds = 0-1
"""


def _pipeline(root: Path, cfg_path: Path):
    cfg = str(cfg_path)
    assert cli_main(["gen-data", "--config", cfg, "--seed", "7", "--out", str(root / "data")]) == 0
    assert cli_main(["train", "--config", cfg, "--seed", "7", "--data", str(root / "data" / "train"),
                     "--out", str(root / "train")]) == 0
    assert cli_main(["rollout", "--config", cfg, "--seed", "7", "--mode", "closed_loop",
                     "--checkpoint", str(root / "train" / "checkpoint"), "--out", str(root / "rollout")]) == 0


def _strip_wall_time(path: Path) -> list:
    rows = [line.split(",") for line in path.read_text().splitlines()]
    col = rows[0].index("seconds")
    return [r[:col] + r[col + 1:] for r in rows]


@pytest.mark.criterion(10, "determinism of gen-data/train/rollout and bit-exact container round-trips")
def test_c10_determinism(tmp_path, record_property, capsys):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(DETERMINISM_CONFIG)
    _pipeline(tmp_path / "a", cfg)
    _pipeline(tmp_path / "b", cfg)
    compared = []
    for rel in ("data/train/data.bin", "data/train/manifest.json", "data/heldout/data.bin",
                "data/heldout/manifest.json", "train/checkpoint/data.bin", "train/checkpoint/manifest.json",
                "rollout/rollouts.jsonl"):
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False), rel
        compared.append(rel)
    # the training log matches in every column but wall-clock time
    assert _strip_wall_time(tmp_path / "a/train/train_log.csv") == _strip_wall_time(tmp_path / "b/train/train_log.csv")

    # dataset container: read -> write reproduces the same bytes
    hdr, _ = io.read_container(tmp_path / "a/data/train")
    write_dataset(tmp_path / "rt-data", read_dataset(tmp_path / "a/data/train"), hdr)
    for f in ("data.bin", "manifest.json"):
        assert filecmp.cmp(tmp_path / "a/data/train" / f, tmp_path / "rt-data" / f, shallow=False), f
    # checkpoint container: load -> save reproduces the same bytes
    model, opt, chdr = load_checkpoint(tmp_path / "a/train/checkpoint")
    save_checkpoint(tmp_path / "rt-ckpt", model, opt, chdr["step"], chdr["extra"])
    for f in ("data.bin", "manifest.json"):
        assert filecmp.cmp(tmp_path / "a/train/checkpoint" / f, tmp_path / "rt-ckpt" / f, shallow=False), f
    rows = [json.loads(x) for x in (tmp_path / "a/rollout/rollouts.jsonl").read_text().splitlines()]
    record_property("detail", f"{len(compared)} artifacts identical across two runs ({len(rows)} rollouts); "
                              f"train log identical except wall time; dataset and checkpoint round-trips bit-exact")
