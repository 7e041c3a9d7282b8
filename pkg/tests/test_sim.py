import numpy as np
import pytest

from affordflow.geometry import RigidTransform, apply
from affordflow.numerics.rng import seeded_rng
from affordflow.sim import (
    DegenerateFitError,
    RolloutConfig,
    SimWorld,
    TaskSpec,
    TrackedQueries,
    append_rollout_log,
    flow_to_action,
    observe,
    oracle_steps,
    read_rollout_log,
    rotation_error_deg,
    run_rollout,
    step_world,
    success_check,
    task_from_setup,
)
from affordflow.synth.scenes import generate_scene

from conftest import random_rotation


def _world(kind, seed=0):
    setup = generate_scene(kind, seeded_rng(seed))
    return setup, SimWorld.from_setup(setup)


def test_fixed_attachment_moves_object_and_gripper():
    _, w = _world("pickup")
    act = RigidTransform.from_translation([0, 0, 0.02])
    w2 = step_world(w, act)
    obj0, obj1 = w.registry[w.attached], w2.registry[w2.attached]
    np.testing.assert_allclose(obj1.centroid() - obj0.centroid(), [0, 0, 0.02], atol=1e-12)
    np.testing.assert_allclose(w2.gripper.pose.translation - w.gripper.pose.translation, [0, 0, 0.02], atol=1e-12)
    assert w2.step_index == 1 and w.step_index == 0  # input world untouched


def test_hinge_projection_on_arc_and_off_arc():
    _, w = _world("open")
    oven = w.registry[w.attached]
    h = oven.hinge
    axis = oven.pose.rotation @ h.axis
    pivot = apply(oven.pose, h.pivot[None])[0]
    on_arc = RigidTransform.from_axis_angle(axis, 0.1, pivot)
    w2 = step_world(w, on_arc)
    assert w2.registry[w2.attached].hinge.angle - h.angle == pytest.approx(0.1, abs=1e-12)
    assert w2.residual == pytest.approx(0.0, abs=1e-12) and not w2.limit_hit
    # add a radial push: the angle follows the atan2 of the commanded point, the rest is residual
    g = apply(on_arc, w.gripper.pose.translation[None])[0]
    radial = g - pivot - ((g - pivot) @ axis) * axis
    radial /= np.linalg.norm(radial)
    off = RigidTransform.from_translation(0.01 * radial) @ on_arc
    w3 = step_world(w, off)
    assert w3.registry[w3.attached].hinge.angle - h.angle == pytest.approx(0.1, abs=1e-12)
    assert w3.residual == pytest.approx(0.01, abs=1e-9)


def test_hinge_limit_clamps():
    _, w = _world("open")
    oven = w.registry[w.attached]
    axis = oven.pose.rotation @ oven.hinge.axis
    pivot = apply(oven.pose, oven.hinge.pivot[None])[0]
    big = oven.hinge.upper - oven.hinge.angle + 0.3
    w2 = step_world(w, RigidTransform.from_axis_angle(axis, big, pivot))
    assert w2.limit_hit
    assert w2.registry[w2.attached].hinge.angle == pytest.approx(oven.hinge.upper)


def test_slider_projection_and_limit():
    _, w = _world("press")
    sw = w.registry[w.attached]
    axis = sw.pose.rotation @ sw.slider.axis
    w2 = step_world(w, RigidTransform.from_translation(0.004 * axis + [0.003, 0, 0] * np.array([1, 1, 0])))
    assert w2.registry[w2.attached].slider.offset == pytest.approx(0.004, abs=1e-12)
    w3 = step_world(w, RigidTransform.from_translation(1.0 * axis))
    assert w3.limit_hit and w3.registry[w3.attached].slider.offset == pytest.approx(sw.slider.upper)


def test_flow_to_action_recovers_rigid_motion(rng):
    T = RigidTransform(random_rotation(rng), [0.01, -0.02, 0.03])
    q0 = rng.uniform(-0.05, 0.05, size=(20, 3))
    frames = [q0]
    for _ in range(3):
        frames.append(apply(T, frames[-1]))
    steps = np.diff(np.stack(frames, 1), axis=1)
    est = flow_to_action(steps, q0, np.arange(20))
    np.testing.assert_allclose(est.matrix(), T.matrix(), atol=1e-12)
    est2 = flow_to_action(steps, q0, np.arange(20), horizon=1, start=2)
    np.testing.assert_allclose(est2.matrix(), T.matrix(), atol=1e-12)
    with pytest.raises(DegenerateFitError):
        flow_to_action(steps[:2], q0[:2], np.arange(2))


def test_tracked_queries_follow_bodies():
    setup, w = _world("pickup")
    obj = w.registry[w.attached]
    pts = obj.part_points(obj.parts[0])[:5]
    labels = np.tile([w.attached, 0], (5, 1))
    tq = TrackedQueries.pin(w, pts, labels, np.zeros(5))
    w2 = step_world(w, RigidTransform.from_translation([0.01, 0, 0]))
    np.testing.assert_allclose(tq.positions(w2), pts + [0.01, 0, 0], atol=1e-12)


def test_oracle_steps_match_program():
    setup, w = _world("push")
    obj = w.registry[w.attached]
    pts = obj.part_points(obj.parts[0])[:4]
    labels = np.tile([w.attached, 0], (4, 1))
    st = oracle_steps(w, pts, labels, 3)
    v = setup.program.velocity
    np.testing.assert_allclose(st[:, 0], np.tile(v * 0.5, (4, 1)), atol=1e-12)


def test_observe_arm_mask():
    _, w = _world("pickup")
    with_arm, _ = observe(w, arm_mask=False)
    without, _ = observe(w, arm_mask=True)
    assert (with_arm.labels[:, 0] == w.executor_id).any()
    assert not (without.labels[:, 0] == w.executor_id).any()


def test_success_boundaries():
    _, w = _world("pickup")
    task = TaskSpec("pickup", lift_height=0.05)
    assert not success_check(task, step_world(w, RigidTransform.from_translation([0, 0, 0.0499])))[0]
    assert success_check(task, step_world(w, RigidTransform.from_translation([0, 0, 0.0501])))[0]
    with pytest.raises(ValueError):
        TaskSpec("pickup", lift_height=0.0)


def test_open_close_success_sign():
    _, w = _world("open")
    oven = w.registry[w.attached]
    axis = oven.pose.rotation @ oven.hinge.axis
    pivot = apply(oven.pose, oven.hinge.pivot[None])[0]
    w2 = step_world(w, RigidTransform.from_axis_angle(axis, 0.3, pivot))
    assert success_check(TaskSpec("open", theta_goal=0.25), w2)[0]
    assert not success_check(TaskSpec("close", theta_goal=0.25), w2)[0]


@pytest.mark.parametrize("kind", ["pickup", "open", "pour", "press"])
def test_oracle_rollout_succeeds(kind):
    setup, w = _world(kind, 3)
    r = run_rollout(task_from_setup(setup), w, None, "oracle", seed=3)
    assert r.success, r
    assert r.failure is None and len(r.transforms) == r.steps


def test_rollout_log_round_trip(tmp_path):
    setup, w = _world("pickup", 1)
    r = run_rollout(task_from_setup(setup), w, None, "oracle", seed=1)
    append_rollout_log(tmp_path / "log.jsonl", [r, r])
    rows = read_rollout_log(tmp_path / "log.jsonl")
    assert len(rows) == 2 and rows[0]["task"] == "pickup" and rows[0]["success"] is True
    assert len(rows[0]["transforms"][0]) == 12


def test_rollout_grounding_failure_reported():
    setup, w = _world("open", 0)
    w.instruction_text = "open the fridge"
    r = run_rollout(task_from_setup(setup), w, None, "oracle", seed=0)
    assert not r.success and r.failure == "grounding"


def test_rollout_deterministic():
    setup, w = _world("push", 2)
    cfg = RolloutConfig(obs_noise=0.002)
    a = run_rollout(task_from_setup(setup), w.copy(), None, "oracle", seed=2, cfg=cfg)
    b = run_rollout(task_from_setup(setup), w.copy(), None, "oracle", seed=2, cfg=cfg)
    assert a.to_json() == b.to_json()


def test_rotation_error_deg():
    a = RigidTransform.from_axis_angle([0, 0, 1], 0.0)
    b = RigidTransform.from_axis_angle([0, 0, 1], np.deg2rad(3.0))
    assert rotation_error_deg(a, b) == pytest.approx(3.0, abs=1e-9)
