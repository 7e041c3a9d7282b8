import dataclasses

import numpy as np
import pytest

from affordflow.model import AffordanceModel, NoiseSchedule, tiny_config
from affordflow.numerics.rng import seeded_rng
from affordflow.synth.dataset import DatasetConfig, generate_sample
from affordflow.training import (
    CheckpointError,
    DivergenceError,
    LossWeights,
    PlateauStop,
    TrainConfig,
    TrainRecord,
    aux_weight,
    load_checkpoint,
    loss_acc,
    loss_diff,
    loss_step,
    motion_weights,
    read_records,
    save_checkpoint,
    total_loss,
    train,
    write_records,
)
from affordflow.gradients import tiny_batch

SCHED = NoiseSchedule.linear(100, 1e-3, 0.2)


def _huber(x, d):
    a = abs(x)
    return 0.5 * x * x if a <= d else d * (a - 0.5 * d)


def _val(t):
    return float(np.asarray(t.data if hasattr(t, "data") else t))


def test_min_snr_weight_pointwise():
    snr = SCHED.snr
    np.testing.assert_allclose(SCHED.min_snr_weight, np.minimum(snr, 5.0) / snr, rtol=0, atol=0)
    k = np.arange(1, 101)
    np.testing.assert_array_equal(SCHED.at(k, "min_snr_weight"), SCHED.min_snr_weight)


def test_losses_zero_at_perfect_prediction():
    rng = seeded_rng(0)
    gt = rng.normal(size=(2, 6, 3, 3))
    eps = rng.normal(size=gt.shape)
    assert _val(loss_diff(eps, eps, np.array([3, 90]), SCHED)) == 0.0
    assert _val(loss_step(gt, gt)) == 0.0
    assert _val(loss_acc(gt.cumsum(2), gt.cumsum(2), motion_weights(gt))) == 0.0


def test_loss_step_brute_force():
    rng = seeded_rng(1)
    p, g = rng.normal(size=(5, 3, 3)), rng.normal(size=(5, 3, 3))
    ref = 0.0
    for i in range(5):
        for t in range(3):
            ref += sum((p[i, t, c] - g[i, t, c]) ** 2 for c in range(3))
    assert _val(loss_step(p, g)) == pytest.approx(ref / 5, abs=1e-12)


def test_loss_acc_brute_force():
    rng = seeded_rng(2)
    s_hat, s = rng.normal(size=(6, 3, 3)) * 0.02, rng.normal(size=(6, 3, 3)) * 0.02
    w = rng.uniform(0.1, 1.0, size=6)
    lam, delta = 0.3, 0.01
    r = [sum(_huber(s_hat[i, t, c] - s[i, t, c], delta) for t in range(3) for c in range(3)) for i in range(6)]
    ref = (1 - lam) * sum(r) / 6 + lam * sum(w[i] * r[i] for i in range(6)) / sum(w)
    assert _val(loss_acc(s_hat, s, w, lam, delta)) == pytest.approx(ref, abs=1e-12)


def test_loss_diff_brute_force():
    rng = seeded_rng(3)
    e_hat, e = rng.normal(size=(2, 4, 3, 3)), rng.normal(size=(2, 4, 3, 3))
    k = np.array([2, 70])
    ref = np.mean([np.mean((e_hat[b] - e[b]) ** 2) * SCHED.min_snr_weight[k[b] - 1] for b in range(2)])
    assert _val(loss_diff(e_hat, e, k, SCHED)) == pytest.approx(ref, abs=1e-12)


def test_lambda_zero_is_unweighted_mean():
    rng = seeded_rng(4)
    s_hat, s = rng.normal(size=(2, 7, 3, 3)), rng.normal(size=(2, 7, 3, 3))
    w = rng.uniform(0.01, 5, size=(2, 7))
    plain = loss_acc(s_hat, s, np.ones((2, 7)), lam=0.0)
    assert abs(_val(loss_acc(s_hat, s, w, lam=0.0)) - _val(plain)) < 1e-12


def test_weighting_changes_value_with_moving_and_static():
    gt = np.zeros((4, 3, 3))
    gt[:2] = 0.01  # two moving queries, two static
    pred = gt.copy()
    pred[2:] += 0.003  # error only on static ones
    w = motion_weights(gt)
    a = _val(loss_acc(pred.cumsum(1), gt.cumsum(1), w, lam=0.5))
    b = _val(loss_acc(pred.cumsum(1), gt.cumsum(1), w, lam=0.0))
    assert a != b and a < b


def test_motion_weight_scale_invariance():
    rng = seeded_rng(5)
    s_hat, s = rng.normal(size=(5, 3, 3)), rng.normal(size=(5, 3, 3))
    w = rng.uniform(0.1, 1, 5)
    assert _val(loss_acc(s_hat, s, w)) == pytest.approx(_val(loss_acc(s_hat, s, 37.0 * w)), abs=1e-12)


def test_motion_weights_floor():
    steps = np.zeros((3, 2, 3))
    steps[0, :, 0] = [0.01, 0.03]
    np.testing.assert_allclose(motion_weights(steps, 1e-3), [0.021, 1e-3, 1e-3])


def test_loss_shape_errors():
    with pytest.raises(ValueError):
        loss_step(np.zeros((2, 3, 3)), np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        loss_acc(np.zeros((2, 3, 3)), np.zeros((2, 3, 3)), np.zeros(2))


def test_aux_weight_bounds():
    a = aux_weight(np.arange(1, 101), SCHED)
    assert np.all((a > 0) & (a <= 1)) and a[0] == 1.0


def test_perfect_denoiser_gives_zero_total():
    cfg = tiny_config()
    model = AffordanceModel(cfg, 0)
    out = total_loss(model, tiny_batch(cfg), NoiseSchedule.from_config(cfg), LossWeights(), seeded_rng(0),
                     eps_hook=lambda eps, k: eps)
    assert out.components == {"l_diff": 0.0, "l_step": pytest.approx(0.0, abs=1e-24),
                              "l_acc": pytest.approx(0.0, abs=1e-24)}


def test_total_loss_combines_components():
    cfg = tiny_config()
    model = AffordanceModel(cfg, 0)
    w = LossWeights(diff=1.0, step=0.3, acc=0.7)
    out = total_loss(model, tiny_batch(cfg), NoiseSchedule.from_config(cfg), w, seeded_rng(0))
    c = out.components
    assert float(out.total.data) == pytest.approx(c["l_diff"] + 0.3 * c["l_step"] + 0.7 * c["l_acc"], rel=1e-12)


def _samples(n=4):
    kinds = ("open", "pour", "pickup", "push")
    return [generate_sample(kinds[i % 4], 0, i, DatasetConfig(n_queries=16)) for i in range(n)]


def test_training_deterministic_and_logged(tmp_path):
    cfg = tiny_config()
    tc = TrainConfig(steps=6, batch_size=2, log_path=str(tmp_path / "log.csv"))
    a = train(_samples(), cfg, tc, seed=1)
    b = train(_samples(), cfg, dataclasses.replace(tc, log_path=None), seed=1)
    for k, p in a.model.parameters().items():
        np.testing.assert_array_equal(p.data, b.model.parameters()[k].data)
    recs = read_records(tmp_path / "log.csv")
    assert [r.epoch for r in recs] == [1, 2, 3]
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,l_diff,l_step,l_acc,total,grad_norm,lr,seconds"
    assert [r.losses() for r in recs] == [r.losses() for r in a.records]


def test_records_round_trip(tmp_path):
    recs = [TrainRecord(1, 0.1, 0.2, 0.3, 0.6, 1.5, 1e-3, 2.0)]
    write_records(tmp_path / "r.csv", recs)
    assert read_records(tmp_path / "r.csv") == recs


def test_plateau_stop():
    stop = PlateauStop(patience=2)
    mk = lambda v: [TrainRecord(0, 0, 0, 0, v, 0, 0, 0)]
    assert not stop(mk(1.0))
    assert not stop(mk(1.0))
    assert stop(mk(1.0))


def test_early_stop_hook_halts():
    res = train(_samples(), tiny_config(), TrainConfig(steps=20, batch_size=2), early_stop=lambda r: len(r) >= 2)
    assert res.stopped_early and res.steps_done == 4


def test_divergence_detected(tmp_path):
    tc = TrainConfig(steps=30, batch_size=2, lr=5.0, clip_norm=0.0, divergence_factor=1.0001,
                     divergence_window=3, log_path=str(tmp_path / "log.csv"))
    with pytest.raises(DivergenceError) as exc:
        train(_samples(), tiny_config(), tc, seed=0)
    assert exc.value.records and exc.value.dump_path.exists()


def test_checkpoint_round_trip_and_resume(tmp_path):
    cfg = tiny_config()
    tc = TrainConfig(steps=4, batch_size=2)
    res = train(_samples(), cfg, tc, seed=0)
    save_checkpoint(tmp_path / "c", res.model, res.optimizer, res.steps_done)
    model, opt, hdr = load_checkpoint(tmp_path / "c", cfg)
    assert hdr["step"] == 4 and opt.step == res.optimizer.step
    for k, p in res.model.parameters().items():
        np.testing.assert_array_equal(model.parameters()[k].data, p.data.astype(np.float32))
    # a reloaded checkpoint re-saves bit-identically
    save_checkpoint(tmp_path / "d", model, opt, hdr["step"])
    assert (tmp_path / "c" / "data.bin").read_bytes() == (tmp_path / "d" / "data.bin").read_bytes()
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c", tiny_config(d=8))


def test_checkpoint_refuses_architecture_mismatch(tmp_path):
    import json
    cfg = tiny_config()
    save_checkpoint(tmp_path / "c", AffordanceModel(cfg, 0))
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    man["header"]["model_config"]["layers"] = 2
    (tmp_path / "c" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c")


def test_cosine_decay_schedule():
    from affordflow.training import _lr_at

    tc = TrainConfig(steps=101, lr=1e-3, warmup=1, decay="cosine", lr_final=1e-5)
    assert _lr_at(0, tc) == pytest.approx(1e-3)
    assert _lr_at(1, tc) == pytest.approx(1e-3)
    assert _lr_at(51, tc) == pytest.approx(0.5 * (1e-3 + 1e-5))
    assert _lr_at(101, tc) == pytest.approx(1e-5)
    assert _lr_at(50, TrainConfig(steps=100, lr=1e-3)) == 1e-3
    with pytest.raises(ValueError):
        TrainConfig(decay="step")
