"""Ground-truth motion programs and their roll-out onto query points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import RigidTransform, apply, compose, invert

AFFORDANCES = ("open", "close", "pickup", "place", "push", "pull", "pour", "press", "hang-on", "cut")
O2O_KINDS = frozenset({"place", "pour", "cut", "hang-on"})


class TimestampError(ValueError):
    pass


@dataclass
class MotionProgram:
    """Rigid motion of the moving bodies over ``[0, duration]`` seconds.

    ``mode == "translate"``: constant ``velocity`` (m/s) until ``stop_distance``
    has been covered. ``mode == "rotate"``: rotation about ``axis`` through
    ``pivot`` (world frame) at ``omega`` rad/s, with the absolute angle
    ``angle0 + omega * t`` clamped to ``[lower, upper]``.

    ``moving`` holds labels of moving points: ``(object_id, -1)`` for a whole
    object, ``(object_id, part_id)`` for a single part.
    """

    kind: str
    mode: str
    moving: tuple
    duration: float = 3.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stop_distance: float = np.inf
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: float = 0.0
    angle0: float = 0.0
    lower: float = -np.inf
    upper: float = np.inf
    hinge_object: int = -1  # object whose joint angle tracks the rotation, if any

    def angle_at(self, t: float) -> float:
        return float(np.clip(self.angle0 + self.omega * t, self.lower, self.upper))

    def transform_at(self, t: float) -> RigidTransform:
        """World transform of the moving bodies from program time 0 to ``t``."""
        if self.mode == "translate":
            speed = float(np.linalg.norm(self.velocity))
            if speed == 0.0:
                return RigidTransform.identity()
            s = min(speed * t, self.stop_distance)
            return RigidTransform.from_translation(self.velocity / speed * s)
        if self.mode == "rotate":
            return RigidTransform.from_axis_angle(self.axis, self.angle_at(t) - self.angle0, self.pivot)
        raise ValueError(f"unknown motion mode {self.mode!r}")

    def between(self, t_a: float, t_b: float) -> RigidTransform:
        return compose(self.transform_at(t_b), invert(self.transform_at(t_a)))

    def moving_mask(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels).reshape(-1, 2)
        mask = np.zeros(len(labels), dtype=bool)
        for obj, part in self.moving:
            if part < 0:
                mask |= labels[:, 0] == obj
            else:
                mask |= (labels[:, 0] == obj) & (labels[:, 1] == part)
        return mask


@dataclass
class DisplacementSequence:
    """Per-query step displacements, shape ``(N_q, m, 3)`` in meters."""

    steps: np.ndarray
    role_mask: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.float64)
        self.role_mask = np.asarray(self.role_mask, dtype=np.int32).reshape(-1)
        if self.steps.ndim != 3 or self.steps.shape[2] != 3:
            raise ValueError(f"steps must be (N_q, m, 3), got {self.steps.shape}")
        if len(self.role_mask) != len(self.steps):
            raise ValueError("role mask length differs from query count")
        if not np.all(np.isfinite(self.steps)):
            raise ValueError("non-finite displacement")

    @property
    def m(self) -> int:
        return self.steps.shape[1]

    def trajectories(self) -> np.ndarray:
        """Cumulative displacement from the first frame, ``s_i^t`` for t = 1..m."""
        return np.cumsum(self.steps, axis=1)

    def keyframes(self, q0: np.ndarray) -> np.ndarray:
        """Positions at frames 0..m given the first-frame positions ``q0``."""
        q0 = np.asarray(q0, dtype=np.float64)
        return np.concatenate([q0[:, None], q0[:, None] + self.trajectories()], axis=1)


def roll_out_keyframes(program: MotionProgram, points: np.ndarray, labels: np.ndarray,
                       timestamps) -> np.ndarray:
    """Query positions at every timestamp, shape ``(N_q, F, 3)``.

    ``points`` are the query positions at ``timestamps[0]``; moving queries
    follow the program's rigid motion, all others stay put.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise TimestampError("timestamps must be strictly increasing with at least two entries")
    if ts[0] < 0 or ts[-1] > program.duration + 1e-9:
        raise TimestampError(
            f"timestamps [{ts[0]:.3f}, {ts[-1]:.3f}] outside program duration {program.duration}")
    pts = np.asarray(points, dtype=np.float64)
    mask = program.moving_mask(labels)
    frames = np.repeat(pts[:, None, :], len(ts), axis=1)
    for f, t in enumerate(ts[1:], start=1):
        frames[mask, f] = apply(program.between(ts[0], t), pts[mask])
    return frames


def roll_out_motion(program: MotionProgram, points: np.ndarray, labels: np.ndarray,
                    timestamps, role_mask) -> DisplacementSequence:
    frames = roll_out_keyframes(program, points, labels, timestamps)
    return DisplacementSequence(np.diff(frames, axis=1), role_mask)
