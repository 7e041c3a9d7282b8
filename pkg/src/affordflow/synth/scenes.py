"""Procedural tabletop scenes, one generator per affordance kind."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import RigidTransform, ScenePointCloud, apply
from ..instruction import EXECUTOR, Instruction
from . import objects as ob
from .motion import AFFORDANCES, O2O_KINDS, MotionProgram

STEP_SECONDS = 0.5
LIFT_SPEED = 0.06  # m/s
PLANAR_SPEED = 0.06
HINGE_SPEED = 0.3  # rad/s
TILT_SPEED = 0.5
CUT_SPEED = 0.04
PRESS_SPEED = 0.02


@dataclass
class SceneRanges:
    """Sampling ranges for object size and placement.

    Object sizes are nominal sizes times a scale factor drawn from
    ``[scale_lo, scale_hi]`` minus the open band ``scale_exclude`` (when set),
    so a held-out split can draw only from inside that band.
    """

    scale_lo: float = 0.8
    scale_hi: float = 1.2
    scale_exclude: tuple | None = None
    x_range: tuple = (0.45, 0.75)
    y_range: tuple = (-0.2, 0.2)
    yaw_range: float = 0.15
    n_distractors: tuple = (1, 2)
    duration: float = 3.0

    def draw_scale(self, rng) -> float:
        if self.scale_exclude is None:
            return float(rng.uniform(self.scale_lo, self.scale_hi))
        a, b = self.scale_exclude
        width = (a - self.scale_lo) + (self.scale_hi - b)
        u = rng.uniform(0, width)
        return float(self.scale_lo + u if u < a - self.scale_lo else b + (u - (a - self.scale_lo)))


TRAIN_RANGES = SceneRanges(scale_exclude=(0.95, 1.05))
HELDOUT_RANGES = SceneRanges(scale_lo=0.95, scale_hi=1.05)


@dataclass
class SceneSetup:
    kind: str
    registry: list
    program: MotionProgram
    instruction: Instruction
    executor_id: int
    tool_id: int  # executor for single-object kinds
    target_id: int
    goal: dict = field(default_factory=dict)
    scale: float = 1.0

    def object_id(self, name: str) -> int:
        for i, o in enumerate(self.registry):
            if o.name == name:
                return i
        raise KeyError(name)


def _xy(rng, ranges: SceneRanges):
    return rng.uniform(*ranges.x_range), rng.uniform(*ranges.y_range)


def _place_distractors(rng, registry, ranges, occupied):
    n = rng.integers(ranges.n_distractors[0], ranges.n_distractors[1] + 1)
    kinds = ("block", "ball", "can")
    for _ in range(n):
        for _attempt in range(50):
            x, y = rng.uniform(0.3, 0.9), rng.uniform(-0.45, 0.45)
            if all(np.hypot(x - ox, y - oy) > 0.22 for ox, oy in occupied):
                break
        else:
            continue
        occupied.append((x, y))
        registry.append(ob.make_distractor(rng, ob.yaw_pose(x, y, rng.uniform(-np.pi, np.pi)),
                                           kinds[rng.integers(len(kinds))]))


def whole(obj_id: int) -> tuple:
    return (obj_id, -1)


def generate_scene(kind: str, rng: np.random.Generator, ranges: SceneRanges | None = None,
                   with_handle: bool = True) -> SceneSetup:
    """Build a labeled scene, its motion program and its instruction for ``kind``.

    Registry layout: 0 table, 1 executor (gripper proxy), then the task
    objects, then static distractors.
    """
    if kind not in AFFORDANCES:
        raise ValueError(f"unknown affordance kind {kind!r}")
    ranges = ranges or SceneRanges()
    s = ranges.draw_scale(rng)
    reg: list = [ob.make_table(rng)]
    reg.append(None)  # executor, filled once the grasp is known
    EX = 1
    occupied = []
    goal: dict = {}
    x, y = _xy(rng, ranges)
    yaw = rng.uniform(-ranges.yaw_range, ranges.yaw_range)
    dur = ranges.duration

    if kind in ("open", "close"):
        oven = ob.make_oven(rng, ob.yaw_pose(x + 0.1, y, yaw), 0.38 * s, 0.30 * s, 0.26 * s,
                            with_handle=with_handle)
        if kind == "open":
            oven.hinge.angle = rng.uniform(0.0, 0.5)
            omega = HINGE_SPEED
        else:
            oven.hinge.angle = rng.uniform(0.9, 1.5)
            omega = -HINGE_SPEED
        reg.append(oven)
        T = 2
        occupied.append((x + 0.1, y))
        grasp_part = oven.grasp_part
        grasp = oven.part_points(grasp_part).mean(axis=0)
        door_normal = oven.part_transform("door").rotation @ np.array([1.0, 0.0, 0.0])
        if grasp_part == "handle":
            grasp = grasp - 0.012 * door_normal
        else:
            grasp = grasp - 0.02 * door_normal
        reg[EX] = ob.make_gripper(rng, grasp, approach=door_normal)
        axis = oven.pose.rotation @ oven.hinge.axis
        pivot = apply(oven.pose, oven.hinge.pivot)
        moving = tuple((T, oven.parts.index(p)) for p in oven.hinge.moving_parts) + (whole(EX),)
        prog = MotionProgram(kind, "rotate", moving, dur, axis=axis, pivot=pivot, omega=omega,
                             angle0=oven.hinge.angle, lower=oven.hinge.lower, upper=oven.hinge.upper,
                             hinge_object=T)
        instr = Instruction(kind, EXECUTOR, "oven")
        tool = EX

    elif kind == "pickup":
        r, h = 0.04 * s, 0.11 * s
        cup = ob.make_cup(rng, ob.yaw_pose(x, y, yaw), r, h)
        reg.append(cup)
        T = 2
        occupied.append((x, y))
        reg[EX] = ob.make_gripper(rng, np.array([x - r + 0.01, y, h * 0.5]), approach=(1, 0, 0))
        prog = MotionProgram(kind, "translate", (whole(T), whole(EX)), dur,
                             velocity=np.array([0, 0, LIFT_SPEED]))
        instr = Instruction(kind, EXECUTOR, "cup")
        tool = EX

    elif kind == "place":
        r, h = 0.04 * s, 0.11 * s
        pr = 0.08 * s
        px, py = x, y
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.12, 0.22)
        cx, cy = px + dist * np.cos(ang), py + dist * np.sin(ang)
        z0 = rng.uniform(0.10, 0.20)
        plate = ob.make_plate(rng, ob.yaw_pose(px, py), pr)
        cup = ob.make_cup(rng, ob.yaw_pose(cx, cy, yaw, z0), r, h)
        reg += [cup, plate]
        tool, T = 2, 3
        occupied += [(px, py), (cx, cy)]
        reg[EX] = ob.make_gripper(rng, np.array([cx - r + 0.01, cy, z0 + h * 0.5]), approach=(1, 0, 0))
        delta = np.array([px - cx, py - cy, 0.01 - z0])
        prog = MotionProgram(kind, "translate", (whole(tool), whole(EX)), dur,
                             velocity=PLANAR_SPEED * delta / np.linalg.norm(delta),
                             stop_distance=float(np.linalg.norm(delta)))
        goal = {"center": np.array([px, py, 0.01]), "radius": pr}
        instr = Instruction(kind, "cup", "plate")

    elif kind in ("push", "pull"):
        size = np.full(3, 0.07 * s)
        box = ob.make_box(rng, ob.yaw_pose(x, y, yaw), size)
        reg.append(box)
        T = 2
        occupied.append((x, y))
        front = box.pose.rotation @ np.array([-1.0, 0.0, 0.0])
        grasp = np.array([x, y, size[2] / 2]) + front * (size[0] / 2 + 0.005)
        reg[EX] = ob.make_gripper(rng, grasp, approach=-front)
        direction = -front if kind == "push" else front
        prog = MotionProgram(kind, "translate", (whole(T), whole(EX)), dur,
                             velocity=PLANAR_SPEED * direction)
        instr = Instruction(kind, EXECUTOR, "box")
        tool = EX

    elif kind == "press":
        size = np.array([0.10, 0.10, 0.05]) * s
        sw = ob.make_switch(rng, ob.yaw_pose(x, y, yaw), size)
        reg.append(sw)
        T = 2
        occupied.append((x, y))
        top = np.array([x, y, size[2] + 0.02 + 0.004])
        reg[EX] = ob.make_gripper(rng, top, approach=(0, 0, -1))
        button = sw.parts.index("button")
        prog = MotionProgram(kind, "translate", ((T, button), whole(EX)), dur,
                             velocity=np.array([0, 0, -PRESS_SPEED]))
        goal = {"button_top": float(top[2] - 0.004)}
        instr = Instruction(kind, EXECUTOR, "switch")
        tool = EX

    elif kind == "pour":
        br = 0.07 * s
        bowl = ob.make_bowl(rng, ob.yaw_pose(x, y), br)
        cr, ch = 0.035 * s, 0.10 * s
        z0 = rng.uniform(0.10, 0.16)
        cup = ob.make_cup(rng, ob.yaw_pose(x - 0.5 * br, y, 0.0, z0), cr, ch)
        reg += [bowl, cup]
        T, tool = 2, 3
        occupied.append((x, y))
        tilt0 = rng.uniform(0.0, 0.4)
        pivot = np.array([x - 0.5 * br, y, z0 + ch / 2])
        cup.pose = RigidTransform.from_axis_angle((0, 1, 0), tilt0, pivot) @ cup.pose
        grasp = apply(cup.pose, np.array([-cr + 0.01, 0.0, ch / 2]))
        reg[EX] = ob.make_gripper(rng, grasp, approach=cup.pose.rotation @ np.array([1.0, 0, 0]))
        prog = MotionProgram(kind, "rotate", (whole(tool), whole(EX)), dur, axis=np.array([0, 1.0, 0]),
                             pivot=pivot, omega=TILT_SPEED, angle0=tilt0, lower=0.0, upper=2.2)
        goal = {"pivot": pivot}
        instr = Instruction(kind, "cup", "bowl")

    elif kind == "cut":
        ar = 0.04 * s
        apple = ob.make_apple(rng, ob.yaw_pose(x, y), ar)
        length = 0.14
        gap = rng.uniform(0.0, 0.04)
        z0 = 2 * ar + gap
        knife = ob.make_knife(rng, ob.yaw_pose(x, y, 0.0, z0), length)
        reg += [apple, knife]
        T, tool = 2, 3
        occupied.append((x, y))
        grasp = apply(knife.pose, np.array([-length / 2 - 0.045, 0.0, 0.025]))
        reg[EX] = ob.make_gripper(rng, grasp + np.array([-0.01, 0, 0]), approach=(1, 0, 0))
        prog = MotionProgram(kind, "translate", (whole(tool), whole(EX)), dur,
                             velocity=np.array([0, 0, -CUT_SPEED]), stop_distance=z0 - 0.003)
        instr = Instruction(kind, "knife", "apple")

    elif kind == "hang-on":
        height, arm = 0.28 * s, 0.12
        rack = ob.make_rack(rng, ob.yaw_pose(x + 0.1, y), height, arm)
        mr, mh = 0.035, 0.09
        hook = np.array([x + 0.1 - 0.6 * arm, y, height - 0.02])
        start = hook + np.array([rng.uniform(-0.2, -0.12), rng.uniform(-0.05, 0.05), rng.uniform(-0.03, 0.03)])
        handle_local = np.array([0.0, -mr - 0.02, mh / 2])
        mug = ob.make_cup(rng, RigidTransform.from_translation(start - handle_local), mr, mh, name="mug")
        reg += [rack, mug]
        T, tool = 2, 3
        occupied.append((x + 0.1, y))
        grasp = apply(mug.pose, np.array([-mr + 0.01, 0.0, mh / 2]))
        reg[EX] = ob.make_gripper(rng, grasp, approach=(1, 0, 0))
        delta = hook - start
        prog = MotionProgram(kind, "translate", (whole(tool), whole(EX)), dur,
                             velocity=PLANAR_SPEED * delta / np.linalg.norm(delta),
                             stop_distance=float(np.linalg.norm(delta)))
        goal = {"hook": hook, "handle_local": handle_local}
        instr = Instruction(kind, "mug", "rack")
    else:  # pragma: no cover - guarded above
        raise AssertionError(kind)

    _place_distractors(rng, reg, ranges, occupied)
    return SceneSetup(kind=kind, registry=reg, program=prog, instruction=instr, executor_id=EX,
                      tool_id=tool, target_id=T, goal=goal, scale=s)


# ---------------------------------------------------------------- state & clouds


def registry_at(setup: SceneSetup, t: float) -> list:
    """Deep copy of the registry with the program applied up to time ``t``."""
    prog = setup.program
    reg = [o.copy() for o in setup.registry]
    Tt = prog.transform_at(t)
    for obj_id, part in prog.moving:
        obj = reg[obj_id]
        if part >= 0:
            if obj.hinge is not None and obj.parts[part] in obj.hinge.moving_parts and prog.hinge_object == obj_id:
                obj.hinge.angle = prog.angle_at(t)
            else:
                # a sliding part (e.g. a button): bake the motion into its local samples
                obj.local = dict(obj.local)
                world = apply(Tt, obj.part_points(obj.parts[part]))
                inv_pose = obj.pose
                obj.local[obj.parts[part]] = (world - inv_pose.translation) @ inv_pose.rotation
        else:
            obj.pose = Tt @ obj.pose
    return reg


def labeled_points(registry: list, object_ids=None, exclude=()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenated (points, colors, labels) for the chosen objects."""
    ids = range(len(registry)) if object_ids is None else object_ids
    pts, cols, labs = [], [], []
    for i in ids:
        if i in exclude:
            continue
        obj = registry[i]
        for j, part in enumerate(obj.parts):
            p = obj.part_points(part)
            pts.append(p)
            cols.append(obj.colors[part])
            labs.append(np.tile([i, j], (len(p), 1)))
    return np.concatenate(pts), np.concatenate(cols), np.concatenate(labs).astype(np.int32)


def scene_cloud(registry: list, executor_id: int = 1, rng: np.random.Generator | None = None,
                n_outliers: int = 0) -> ScenePointCloud:
    """Scene cloud without the executor, optionally with floating outliers.

    Outliers get label ``(-1, -1)``.
    """
    pts, cols, labs = labeled_points(registry, exclude=(executor_id,))
    if n_outliers and rng is not None:
        lo, hi = pts.min(axis=0), pts.max(axis=0) + np.array([0, 0, 0.3])
        out = rng.uniform(lo, hi, size=(n_outliers, 3))
        pts = np.concatenate([pts, out])
        cols = np.concatenate([cols, rng.uniform(0, 1, size=(n_outliers, 3))])
        labs = np.concatenate([labs, np.full((n_outliers, 2), -1, np.int32)])
    return ScenePointCloud(pts, cols, labs)


def region_points(registry: list, obj_id: int, parts=None) -> tuple[np.ndarray, np.ndarray]:
    """Points and labels of an object's parts (all parts when ``parts`` is None)."""
    obj = registry[obj_id]
    names = obj.parts if parts is None else parts
    pts, labs = [], []
    for name in names:
        j = obj.parts.index(name)
        p = obj.part_points(name)
        pts.append(p)
        labs.append(np.tile([obj_id, j], (len(p), 1)))
    return np.concatenate(pts), np.concatenate(labs).astype(np.int32)


def hinge_axis_distance(points: np.ndarray, axis: np.ndarray, pivot: np.ndarray) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    d = np.asarray(points) - pivot
    return np.linalg.norm(d - np.outer(d @ a, a), axis=1)


def is_o2o(kind: str) -> bool:
    return kind in O2O_KINDS
