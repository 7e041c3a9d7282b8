"""Kinematic execution of point flow.

A :class:`SimWorld` holds the scene objects, a gripper rigidly attached to
the manipulated body (grasping is assumed done), and the joint that body
moves along. Predicted flow on the rigid query set is turned into a world
delta transform by a weighted rigid fit and applied to the gripper; hinged
and sliding parts are projected back onto their joint.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    QuerySet,
    RankDeficientError,
    RigidTransform,
    ScenePointCloud,
    apply,
    fit_rigid,
    invert,
    rotation_angle,
)
from .grounding import GroundingError, GroundingRequest, TaskUnderstandingError, ground, unique_registry
from .metrics import ade_fde_steps
from .numerics.rng import seeded_rng
from .synth.dataset import DatasetConfig, clean_scene, simulate_sensor
from .synth.motion import MotionProgram
from .synth.scenes import STEP_SECONDS, SceneSetup, labeled_points, region_points

# which body the gripper holds and how it may move
ATTACH = {
    "open": ("target", "hinge"), "close": ("target", "hinge"), "press": ("target", "slider"),
    "pickup": ("target", "fixed"), "place": ("tool", "fixed"), "push": ("target", "fixed"),
    "pull": ("target", "fixed"), "pour": ("tool", "fixed"), "cut": ("tool", "fixed"),
    "hang-on": ("tool", "fixed"),
}


class DegenerateFitError(RuntimeError):
    pass


@dataclass
class TaskSpec:
    kind: str
    lift_height: float = 0.05
    theta_goal: float = 0.25  # rad
    tilt_angle: float = 1.0  # rad from upright
    push_distance: float = 0.05
    press_depth: float = 0.008
    hang_tolerance: float = 0.03
    place_height: float = 0.03  # max bottom height above the goal surface
    max_steps: int = 16
    goal: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lift_height", "theta_goal", "tilt_angle", "push_distance", "press_depth",
                     "hang_tolerance", "place_height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"task threshold {name} must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class SimWorld:
    registry: list
    executor_id: int
    tool_id: int
    target_id: int
    attached: int
    joint: str  # fixed | hinge | slider
    instruction_text: str
    program: MotionProgram | None = None
    step_index: int = 0
    initial: dict = field(default_factory=dict)
    limit_hit: bool = False
    residual: float = 0.0

    @classmethod
    def from_setup(cls, setup: SceneSetup) -> "SimWorld":
        reg = unique_registry([o.copy() for o in setup.registry])
        role, joint = ATTACH[setup.kind]
        attached = setup.target_id if role == "target" else setup.tool_id
        w = cls(reg, setup.executor_id, setup.tool_id, setup.target_id, attached, joint,
                setup.instruction.raw_text, setup.program)
        w.initial = snapshot(w)
        return w

    @property
    def gripper(self):
        return self.registry[self.executor_id]

    def copy(self) -> "SimWorld":
        return copy.deepcopy(self)


def snapshot(world: SimWorld) -> dict:
    obj = world.registry[world.attached]
    snap = {"centroid": obj.centroid(), "translation": obj.pose.translation.copy()}
    if obj.hinge is not None:
        snap["angle"] = obj.hinge.angle
    if obj.slider is not None:
        snap["offset"] = obj.slider.offset
    return snap


def task_from_setup(setup: SceneSetup, **overrides) -> TaskSpec:
    return TaskSpec(setup.kind, goal=dict(setup.goal), **overrides)


# ---------------------------------------------------------------- stepping


@dataclass
class StepInfo:
    limit_hit: bool
    residual: float


def step_world(world: SimWorld, action: RigidTransform) -> SimWorld:
    """Apply ``action`` (a world-frame delta) to the gripper and whatever it holds."""
    w = world.copy()
    g = w.gripper
    cmd = action @ g.pose
    obj = w.registry[w.attached]
    w.limit_hit = False
    w.residual = 0.0
    if w.joint == "fixed":
        obj.pose = action @ obj.pose
        g.pose = cmd
    elif w.joint == "hinge":
        h = obj.hinge
        axis = obj.pose.rotation @ h.axis
        axis = axis / np.linalg.norm(axis)
        pivot = apply(obj.pose, h.pivot[None])[0]
        u = _perp(g.pose.translation - pivot, axis)
        v = _perp(cmd.translation - pivot, axis)
        phi = float(np.arctan2(axis @ np.cross(u, v), u @ v)) if np.linalg.norm(u) * np.linalg.norm(v) > 0 else 0.0
        new = float(np.clip(h.angle + phi, h.lower, h.upper))
        w.limit_hit = not np.isclose(new, h.angle + phi, rtol=0, atol=1e-12)
        turn = RigidTransform.from_axis_angle(axis, new - h.angle, pivot)
        h.angle = new
        g.pose = turn @ g.pose
        w.residual = float(np.linalg.norm(cmd.translation - g.pose.translation))
    elif w.joint == "slider":
        s = obj.slider
        axis = obj.pose.rotation @ s.axis
        delta = float((cmd.translation - g.pose.translation) @ axis)
        new = float(np.clip(s.offset + delta, s.lower, s.upper))
        w.limit_hit = not np.isclose(new, s.offset + delta, rtol=0, atol=1e-12)
        g.pose = RigidTransform.from_translation(axis * (new - s.offset)) @ g.pose
        s.offset = new
        w.residual = float(np.linalg.norm(cmd.translation - g.pose.translation))
    else:
        raise ValueError(f"unknown joint type {w.joint!r}")
    w.step_index += 1
    return w


def _perp(v, axis):
    return v - (v @ axis) * axis


# ---------------------------------------------------------------- observation


def observe(world: SimWorld, arm_mask: bool = True, rng: np.random.Generator | None = None,
            noise: float = 0.0, sensor: DatasetConfig | None = None) -> tuple[ScenePointCloud, list]:
    """Labeled surface points of the current world.

    ``arm_mask`` drops the gripper's points. ``noise`` adds isotropic
    jitter; ``sensor`` routes the points through the depth-camera model.
    """
    exclude = (world.executor_id,) if arm_mask else ()
    pts, cols, labs = labeled_points(world.registry, exclude=exclude)
    if sensor is not None:
        pts, kept = simulate_sensor(pts, sensor.camera(), rng, sensor.pixel_noise, sensor.depth_noise)
        cols, labs = cols[kept], labs[kept]
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    return ScenePointCloud(pts, cols, labs), world.registry


# ---------------------------------------------------------------- queries


@dataclass
class TrackedQueries:
    """Queries pinned to body parts so they can be re-located after each step."""

    labels: np.ndarray  # (N, 2) object id, part index
    local: np.ndarray  # (N, 3) in the part frame
    role: np.ndarray  # (N,) 1 tool / 0 target

    @classmethod
    def pin(cls, world: SimWorld, points: np.ndarray, labels: np.ndarray, role) -> "TrackedQueries":
        local = np.empty_like(points)
        for i, (o, p) in enumerate(labels):
            obj = world.registry[o]
            local[i] = apply(invert(obj.part_transform(obj.parts[p])), points[i][None])[0]
        return cls(np.asarray(labels), local, np.asarray(role, dtype=np.int32))

    def positions(self, world: SimWorld) -> np.ndarray:
        out = np.empty_like(self.local)
        for i, (o, p) in enumerate(self.labels):
            obj = world.registry[o]
            out[i] = apply(obj.part_transform(obj.parts[p]), self.local[i][None])[0]
        return out

    def query_set(self, world: SimWorld) -> QuerySet:
        pos = self.positions(world)
        return QuerySet(pos[self.role == 1], pos[self.role == 0])


def oracle_steps(world: SimWorld, positions: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Ground-truth steps of the task's motion program from the world's current time."""
    prog = world.program
    t0 = world.step_index * STEP_SECONDS
    mask = prog.moving_mask(labels)
    frames = np.repeat(positions[:, None], m + 1, axis=1)
    for j in range(1, m + 1):
        frames[mask, j] = apply(prog.between(t0, t0 + j * STEP_SECONDS), positions[mask])
    return np.diff(frames, axis=1)


def flow_to_action(steps: np.ndarray, q0: np.ndarray, rigid_set, horizon: int = 1, start: int = 0,
                   w_floor: float = 1e-3) -> RigidTransform:
    """Rigid transform carrying the rigid set from keyframe ``start`` to
    ``start + horizon`` of the predicted flow, weighted by motion magnitude."""
    steps = np.asarray(steps, dtype=np.float64)
    idx = np.asarray(rigid_set)
    traj = np.concatenate([np.zeros_like(steps[:, :1]), np.cumsum(steps, axis=1)], axis=1)
    src = q0[idx] + traj[idx, start]
    dst = q0[idx] + traj[idx, start + horizon]
    seg = steps[idx, start:start + horizon]
    weights = w_floor + np.linalg.norm(seg, axis=-1).mean(axis=-1)
    try:
        return fit_rigid(src, dst, weights)
    except RankDeficientError as exc:
        raise DegenerateFitError(f"rigid set of {len(idx)} queries has rank {exc.args[0]}") from exc


# ---------------------------------------------------------------- success


def success_check(task: TaskSpec, world: SimWorld) -> tuple[bool, float]:
    k = task.kind
    obj = world.registry[world.attached]
    init = world.initial
    if k == "pickup":
        lift = float(obj.centroid()[2] - init["centroid"][2])
        return lift >= task.lift_height, lift
    if k in ("open", "close"):
        delta = obj.hinge.angle - init["angle"]
        signed = delta if k == "open" else -delta
        return signed >= task.theta_goal - 1e-12, float(delta)
    if k == "press":
        depth = obj.slider.offset - init["offset"]
        return depth >= task.press_depth, float(depth)
    if k in ("push", "pull"):
        v = world.program.velocity
        moved = float((obj.pose.translation - init["translation"]) @ (v / np.linalg.norm(v)))
        return moved >= task.push_distance, moved
    if k == "place":
        g = task.goal
        bottom = obj.pose.translation
        dist = float(np.linalg.norm(bottom[:2] - np.asarray(g["center"])[:2]))
        low = bottom[2] - g["center"][2] <= task.place_height
        return bool(dist <= g["radius"] and low), dist
    if k == "pour":
        target = world.registry[world.target_id]
        up = obj.pose.rotation[:, 2]
        tilt = float(np.arccos(np.clip(up[2], -1.0, 1.0)))
        rim = obj.part_points("rim").mean(axis=0)
        over = _inside_footprint(target, rim)
        return bool(tilt >= task.tilt_angle and over), tilt
    if k == "cut":
        target = world.registry[world.target_id]
        blade = obj.part_points("blade")
        mid = target.centroid()[2]
        inside = np.array([_inside_footprint(target, p) for p in blade])
        low = blade[:, 2] < mid
        depth = float(blade[:, 2].min() - mid)
        return bool(np.any(inside & low)), depth
    if k == "hang-on":
        handle = obj.part_points("handle").mean(axis=0)
        dist = float(np.linalg.norm(handle - np.asarray(task.goal["hook"])))
        return dist <= task.hang_tolerance, dist
    raise ValueError(f"no success predicate for {k!r}")


def _inside_footprint(obj, point) -> bool:
    """Whether ``point``'s (x, y) lies within the object's horizontal extent around its centroid."""
    pts = obj.points()
    c = pts.mean(axis=0)
    r = np.linalg.norm(pts[:, :2] - c[:2], axis=1).max()
    return bool(np.linalg.norm(np.asarray(point)[:2] - c[:2]) <= r)


# ---------------------------------------------------------------- rollouts


@dataclass
class RolloutConfig:
    n_queries: int = 128
    obs_noise: float = 0.0  # meters, jitter on observed points and tracked queries
    action_noise: float = 0.0  # meters per axis on each executed action
    action_rot_noise: float = 0.0  # radians
    reground_every_step: bool = False
    horizon: int = 1
    clean: DatasetConfig = field(default_factory=lambda: DatasetConfig(n_outliers=0))


@dataclass
class RolloutResult:
    kind: str
    mode: str
    seed: int
    success: bool
    steps: int
    transforms: list
    pred_ade: list
    failure: str | None = None
    measured: float = 0.0
    detail: str = ""

    def to_json(self) -> dict:
        return {"task": self.kind, "mode": self.mode, "seed": int(self.seed), "success": bool(self.success),
                "steps": int(self.steps), "transforms": [t.as_3x4() for t in self.transforms],
                "pred_ade": [float(a) for a in self.pred_ade], "failure": self.failure,
                "measured": float(self.measured),
                "detail": self.detail}


def append_rollout_log(path, results) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    return path


def read_rollout_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _ground_queries(world: SimWorld, cloud: ScenePointCloud, registry, cfg: RolloutConfig, rng):
    req = GroundingRequest(world.instruction_text, cloud, registry, world.executor_id)
    g = ground(req, n_queries=cfg.n_queries, rng=rng)
    if g.tool_mask is None:
        _, ex_labels = region_points(registry, world.executor_id)
        tool_pts = np.concatenate([registry[world.executor_id].part_points(p)
                                   for p in registry[world.executor_id].parts])
        tool_labels = ex_labels[g.tool_index]
        tool_pts = tool_pts[g.tool_index]
    else:
        idx = g.tool_mask.indices[g.tool_index]
        tool_pts, tool_labels = cloud.points[idx], cloud.labels[idx]
    idx = g.target_mask.indices[g.target_index]
    pts = np.concatenate([tool_pts, cloud.points[idx]])
    labels = np.concatenate([tool_labels, cloud.labels[idx]])
    role = np.concatenate([np.ones(len(tool_pts), np.int32), np.zeros(len(idx), np.int32)])
    return g, TrackedQueries.pin(world, pts, labels, role)


def _predict(model, world, cloud, queries: QuerySet, instruction, cfg: RolloutConfig, rng) -> np.ndarray:
    from .model.pipeline import collate, prepare_input, sample_flow

    center = queries.points.mean(axis=0)
    cloud = clean_scene(cloud, center, cfg.clean)
    item = prepare_input(cloud, queries, instruction, model.cfg.n_scene, rng)
    return sample_flow(model, collate([item]), rng)[0]


def _noise_transform(rng, cfg: RolloutConfig) -> RigidTransform:
    t = rng.normal(0.0, cfg.action_noise, 3) if cfg.action_noise > 0 else np.zeros(3)
    if cfg.action_rot_noise > 0:
        axis = rng.normal(size=3)
        return RigidTransform.from_axis_angle(axis, rng.normal(0.0, cfg.action_rot_noise)) @ \
            RigidTransform.from_translation(t)
    return RigidTransform.from_translation(t)


def run_rollout(task: TaskSpec, world: SimWorld, model=None, mode: str = "closed_loop", seed: int = 0,
                cfg: RolloutConfig | None = None) -> RolloutResult:
    """Observe, ground, predict, fit and step until success or the step budget.

    ``closed_loop`` re-observes and re-predicts every cycle; ``open_loop``
    predicts once and replays its steps (repeating the last one past the
    horizon); ``oracle`` uses the task's ground-truth motion program.
    """
    if mode not in ("closed_loop", "open_loop", "oracle"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode != "oracle" and model is None:
        raise ValueError(f"mode {mode!r} needs a model")
    cfg = cfg or RolloutConfig()
    rng = seeded_rng(seed, 23)
    act_rng = seeded_rng(seed, 29)
    m = model.cfg.m if model is not None else 3
    transforms, ades = [], []

    def result(success, failure=None, measured=0.0, detail=""):
        return RolloutResult(task.kind, mode, seed, bool(success), len(transforms), transforms, ades,
                             failure, float(measured), detail)

    cloud, registry = observe(world, True, rng, cfg.obs_noise)
    try:
        g, tracked = _ground_queries(world, cloud, registry, cfg, rng)
    except (GroundingError, TaskUnderstandingError) as exc:
        return result(False, "grounding", detail=str(exc))
    rigid = np.flatnonzero(tracked.role == 1)
    plan = None  # open-loop prediction and its start positions
    ok, measured = success_check(task, world)
    for step in range(task.max_steps):
        if ok:
            break
        pos = tracked.positions(world)
        if cfg.obs_noise > 0:
            pos = pos + rng.normal(0.0, cfg.obs_noise, pos.shape)
        truth = oracle_steps(world, pos, tracked.labels, m)
        try:
            if mode == "oracle":
                action = flow_to_action(truth, pos, rigid, cfg.horizon)
            elif mode == "closed_loop" or plan is None:
                if step > 0:
                    cloud, registry = observe(world, True, rng, cfg.obs_noise)
                    if cfg.reground_every_step:
                        g, tracked = _ground_queries(world, cloud, registry, cfg, rng)
                        rigid = np.flatnonzero(tracked.role == 1)
                        pos = tracked.positions(world)
                        truth = oracle_steps(world, pos, tracked.labels, m)
                qs = QuerySet(pos[tracked.role == 1], pos[tracked.role == 0])
                order = np.concatenate([np.flatnonzero(tracked.role == 1), np.flatnonzero(tracked.role == 0)])
                pred = np.empty((len(pos), m, 3))
                pred[order] = _predict(model, world, cloud, qs, g.instruction, cfg, rng)
                ades.append(ade_fde_steps(pred, truth)[0])
                if mode == "open_loop":
                    plan = (pred, pos)
                action = flow_to_action(pred, pos, rigid, cfg.horizon)
            if mode == "open_loop" and plan is not None and step > 0:
                pred, pos0 = plan
                j = min(step, m - 1)
                action = flow_to_action(pred, pos0, rigid, 1, start=j)
        except DegenerateFitError as exc:
            return result(False, "degenerate_fit", measured, str(exc))
        except FloatingPointError as exc:
            return result(False, "sampling", measured, str(exc))
        if cfg.action_noise > 0 or cfg.action_rot_noise > 0:
            action = _noise_transform(act_rng, cfg) @ action
        world = step_world(world, action)
        transforms.append(action)
        ok, measured = success_check(task, world)
    if ok:
        return result(True, None, measured)
    return result(False, "budget", measured)


def rotation_error_deg(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.degrees(rotation_angle(a.rotation.T @ b.rotation)))
