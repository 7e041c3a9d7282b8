"""Procedural rigid and articulated objects with part-labeled surface samples."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..geometry import RigidTransform, apply, axis_angle_matrix

DENSITY = 1100.0  # surface points per square meter
MIN_PART_POINTS = 12

BASE_COLORS = {
    "table": (0.55, 0.42, 0.30),
    "executor": (0.20, 0.20, 0.22),
    "oven": (0.75, 0.75, 0.78),
    "cup": (0.85, 0.25, 0.20),
    "mug": (0.25, 0.45, 0.80),
    "bowl": (0.90, 0.85, 0.55),
    "plate": (0.95, 0.95, 0.92),
    "box": (0.70, 0.55, 0.25),
    "switch": (0.35, 0.35, 0.40),
    "knife": (0.80, 0.82, 0.85),
    "apple": (0.80, 0.10, 0.15),
    "rack": (0.45, 0.30, 0.20),
    "block": (0.30, 0.65, 0.35),
    "ball": (0.90, 0.60, 0.10),
    "can": (0.60, 0.60, 0.65),
}
PART_TINT = {"handle": -0.25, "door": 0.05, "button": 0.3, "blade": 0.1, "hook": -0.1, "rim": -0.1}


@dataclass
class Hinge:
    """Revolute joint in the owning object's local frame."""

    axis: np.ndarray
    pivot: np.ndarray
    moving_parts: tuple
    angle: float = 0.0
    lower: float = 0.0
    upper: float = np.deg2rad(100.0)

    def transform(self, angle: float | None = None) -> RigidTransform:
        a = self.angle if angle is None else angle
        return RigidTransform.from_axis_angle(self.axis, a, self.pivot)


@dataclass
class Slider:
    """Prismatic joint in the owning object's local frame; ``offset`` along ``axis``."""

    axis: np.ndarray
    moving_parts: tuple
    offset: float = 0.0
    lower: float = 0.0
    upper: float = 0.015

    def transform(self, offset: float | None = None) -> RigidTransform:
        o = self.offset if offset is None else offset
        return RigidTransform.from_translation(np.asarray(self.axis, dtype=np.float64) * o)


@dataclass
class SceneObject:
    name: str
    parts: tuple
    local: dict
    colors: dict
    pose: RigidTransform
    graspable: bool = True
    hinge: Hinge | None = None
    grasp_part: str = "whole"
    bbox: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))  # local min/max
    slider: Slider | None = None

    def part_transform(self, part: str) -> RigidTransform:
        if self.hinge is not None and part in self.hinge.moving_parts:
            return self.pose @ self.hinge.transform()
        if self.slider is not None and part in self.slider.moving_parts:
            return self.pose @ self.slider.transform()
        return self.pose

    def part_points(self, part: str) -> np.ndarray:
        return apply(self.part_transform(part), self.local[part])

    def points(self) -> np.ndarray:
        return np.concatenate([self.part_points(p) for p in self.parts])

    def copy(self) -> "SceneObject":
        return copy.deepcopy(self)

    def footprint_contains(self, xy, margin: float = 0.0) -> bool:
        """Whether a world (x, y) falls inside the object's rotated local bounding box."""
        local = self.pose.rotation.T @ (np.array([xy[0], xy[1], 0.0]) - self.pose.translation)
        lo, hi = self.bbox[0] - margin, self.bbox[1] + margin
        return bool(lo[0] <= local[0] <= hi[0] and lo[1] <= local[1] <= hi[1])

    def centroid(self) -> np.ndarray:
        return self.points().mean(axis=0)


# ---------------------------------------------------------------- samplers


def _count(area: float, density: float = DENSITY) -> int:
    return max(MIN_PART_POINTS, int(round(area * density)))


def box_surface(rng, size, center=(0, 0, 0), faces="xXyYzZ", density=DENSITY) -> np.ndarray:
    """Uniform samples on selected faces of an axis-aligned box.

    ``faces`` letters: lower-case = negative side, upper-case = positive side.
    """
    sx, sy, sz = size
    c = np.asarray(center, dtype=np.float64)
    areas = {"x": sy * sz, "X": sy * sz, "y": sx * sz, "Y": sx * sz, "z": sx * sy, "Z": sx * sy}
    total = sum(areas[f] for f in faces)
    n = _count(total, density)
    probs = np.array([areas[f] for f in faces]) / total
    which = rng.choice(len(faces), size=n, p=probs)
    u = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array([sx, sy, sz])
    for i, f in enumerate(faces):
        sel = which == i
        ax = "xyz".index(f.lower())
        u[sel, ax] = (0.5 if f.isupper() else -0.5) * (sx, sy, sz)[ax]
    return u + c


def cylinder_surface(rng, radius, height, base=(0, 0, 0), top=True, bottom=True,
                     density=DENSITY) -> np.ndarray:
    side = 2 * np.pi * radius * height
    cap = np.pi * radius ** 2
    n_side = _count(side, density)
    th = rng.uniform(0, 2 * np.pi, n_side)
    z = rng.uniform(0, height, n_side)
    pts = [np.stack([radius * np.cos(th), radius * np.sin(th), z], axis=1)]
    for on, zc in ((bottom, 0.0), (top, height)):
        if on:
            pts.append(disk(rng, radius, zc, density))
    return np.concatenate(pts) + np.asarray(base, dtype=np.float64)


def disk(rng, radius, z=0.0, density=DENSITY) -> np.ndarray:
    n = _count(np.pi * radius ** 2, density)
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th), np.full(n, z)], axis=1)


def sphere_surface(rng, radius, center=(0, 0, 0), density=DENSITY) -> np.ndarray:
    n = _count(4 * np.pi * radius ** 2, density)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v + np.asarray(center, dtype=np.float64)


def ring(rng, radius, tube, center, normal_axis: int, density=DENSITY) -> np.ndarray:
    n = _count(4 * np.pi ** 2 * radius * tube, density)
    a = rng.uniform(0, 2 * np.pi, n)
    b = rng.uniform(0, 2 * np.pi, n)
    r = radius + tube * np.cos(b)
    pts = np.stack([r * np.cos(a), r * np.sin(a), tube * np.sin(b)], axis=1)
    order = {0: [2, 0, 1], 1: [0, 2, 1], 2: [0, 1, 2]}[normal_axis]
    return pts[:, order] + np.asarray(center, dtype=np.float64)


def _colorize(rng, name, parts: dict) -> dict:
    base = np.array(BASE_COLORS.get(name, (0.5, 0.5, 0.5)))
    out = {}
    for part, pts in parts.items():
        c = np.clip(base + PART_TINT.get(part, 0.0), 0, 1)
        out[part] = np.clip(c + rng.normal(0, 0.03, size=(len(pts), 3)), 0, 1)
    return out


def _make(rng, name, parts: dict, pose, **kw) -> SceneObject:
    allpts = np.concatenate(list(parts.values()))
    bbox = np.stack([allpts.min(axis=0), allpts.max(axis=0)])
    return SceneObject(name=name, parts=tuple(parts), local=parts, colors=_colorize(rng, name, parts),
                       pose=pose, bbox=bbox, **kw)


# ---------------------------------------------------------------- catalog
# Local frames: origin at the footprint center on the support plane, +z up,
# fronts face -x (toward the robot).


def make_table(rng, size=(1.0, 1.2)) -> SceneObject:
    sx, sy = size
    n = _count(sx * sy, 420.0)
    g = int(np.ceil(np.sqrt(n * sx / sy)))
    h = int(np.ceil(n / g))
    xs, ys = np.meshgrid(np.linspace(-sx / 2, sx / 2, g), np.linspace(-sy / 2, sy / 2, h), indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    pts[:, :2] += rng.uniform(-0.008, 0.008, size=(len(pts), 2))
    return _make(rng, "table", {"top": pts}, RigidTransform.from_translation((0.6, 0.0, 0.0)),
                 graspable=False)


def make_oven(rng, pose, width, depth, height, with_handle=True) -> SceneObject:
    d, w, h = depth, width, height
    body = box_surface(rng, (d, w, h), center=(0, 0, h / 2), faces="XyYzZ")
    door = box_surface(rng, (0.001, w, h), center=(-d / 2 - 0.005, 0, h / 2), faces="x")
    parts = {"body": body, "door": door}
    hinge_pivot = np.array([-d / 2 - 0.005, w / 2, 0.0])
    moving = ("door",)
    if with_handle:
        parts["handle"] = box_surface(rng, (0.02, 0.025, 0.45 * h),
                                      center=(-d / 2 - 0.03, -w / 2 + 0.05, h / 2), density=4 * DENSITY)
        moving = ("door", "handle")
    hinge = Hinge(axis=np.array([0.0, 0.0, -1.0]), pivot=hinge_pivot, moving_parts=moving)
    obj = _make(rng, "oven", parts, pose, graspable=False, hinge=hinge,
                grasp_part="handle" if with_handle else "door")
    return obj


def make_cup(rng, pose, radius, height, name="cup") -> SceneObject:
    wall = cylinder_surface(rng, radius, height, top=False, density=2 * DENSITY)
    rim = ring(rng, radius, 0.004, (0, 0, height), 2, density=3 * DENSITY)
    parts = {"body": wall, "rim": rim}
    if name == "mug":
        parts["handle"] = ring(rng, 0.025, 0.005, (0, -radius - 0.02, height / 2), 0, density=3 * DENSITY)
    return _make(rng, name, parts, pose, grasp_part="body")


def make_bowl(rng, pose, radius) -> SceneObject:
    wall = cylinder_surface(rng, radius, 0.05, top=False, density=2 * DENSITY)
    rim = ring(rng, radius, 0.005, (0, 0, 0.05), 2, density=2 * DENSITY)
    return _make(rng, "bowl", {"body": wall, "rim": rim}, pose)


def make_plate(rng, pose, radius) -> SceneObject:
    return _make(rng, "plate", {"body": disk(rng, radius, 0.01, density=2 * DENSITY)}, pose,
                 graspable=False)


def make_box(rng, pose, size, name="box") -> SceneObject:
    s = np.asarray(size)
    return _make(rng, name, {"body": box_surface(rng, s, center=(0, 0, s[2] / 2), density=2 * DENSITY)},
                 pose)


def make_switch(rng, pose, size) -> SceneObject:
    s = np.asarray(size)
    base = box_surface(rng, s, center=(0, 0, s[2] / 2), faces="xXyYZ", density=2 * DENSITY)
    button = cylinder_surface(rng, 0.02, 0.02, base=(0, 0, s[2]), bottom=False, density=5 * DENSITY)
    return _make(rng, "switch", {"base": base, "button": button}, pose, graspable=False,
                 slider=Slider(np.array([0.0, 0.0, -1.0]), ("button",)))


def make_knife(rng, pose, length) -> SceneObject:
    """Blade along +x with its bottom edge at local z = 0; handle toward -x."""
    blade = box_surface(rng, (length, 0.004, 0.04), center=(0, 0, 0.02), density=6 * DENSITY)
    handle = box_surface(rng, (0.09, 0.02, 0.025), center=(-length / 2 - 0.045, 0, 0.025),
                         density=4 * DENSITY)
    return _make(rng, "knife", {"blade": blade, "handle": handle}, pose, grasp_part="handle")


def make_apple(rng, pose, radius) -> SceneObject:
    return _make(rng, "apple", {"body": sphere_surface(rng, radius, (0, 0, radius), density=3 * DENSITY)},
                 pose)


def make_rack(rng, pose, height, arm) -> SceneObject:
    post = cylinder_surface(rng, 0.012, height, density=3 * DENSITY)
    hook = box_surface(rng, (arm, 0.012, 0.012), center=(-arm / 2, 0, height - 0.02), density=4 * DENSITY)
    base = disk(rng, 0.06, 0.0, density=2 * DENSITY)
    return _make(rng, "rack", {"base": base, "post": post, "hook": hook}, pose, graspable=False)


def make_distractor(rng, pose, kind) -> SceneObject:
    if kind == "block":
        return make_box(rng, pose, rng.uniform(0.04, 0.07, 3), name="block")
    if kind == "ball":
        r = rng.uniform(0.025, 0.04)
        return _make(rng, "ball", {"body": sphere_surface(rng, r, (0, 0, r), density=3 * DENSITY)}, pose)
    r, h = rng.uniform(0.025, 0.035), rng.uniform(0.08, 0.12)
    return _make(rng, "can", {"body": cylinder_surface(rng, r, h, density=2 * DENSITY)}, pose)


def make_gripper(rng, grasp_point, approach=(1.0, 0.0, 0.0), width=0.05) -> SceneObject:
    """Parallel-jaw proxy: fingertips centered on ``grasp_point``, approaching along ``approach``."""
    palm = box_surface(rng, (0.02, width + 0.03, 0.02), center=(-0.06, 0, 0), density=8 * DENSITY)
    f1 = box_surface(rng, (0.05, 0.008, 0.018), center=(-0.025, width / 2, 0), density=8 * DENSITY)
    f2 = box_surface(rng, (0.05, 0.008, 0.018), center=(-0.025, -width / 2, 0), density=8 * DENSITY)
    a = np.asarray(approach, dtype=np.float64)
    a /= np.linalg.norm(a)
    up = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    y = np.cross(up, a)
    y /= np.linalg.norm(y)
    z = np.cross(a, y)
    pose = RigidTransform(np.stack([a, y, z], axis=1), grasp_point)
    return _make(rng, "executor", {"palm": palm, "finger": np.concatenate([f1, f2])}, pose,
                 graspable=False)


def yaw_pose(x, y, yaw=0.0, z=0.0) -> RigidTransform:
    return RigidTransform(axis_angle_matrix((0, 0, 1), yaw), (x, y, z))
