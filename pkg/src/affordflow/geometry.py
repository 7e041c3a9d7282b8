"""Point clouds, pinhole lifting, cleaning filters, SE(3) algebra and rigid fitting.

Points are ``(N, 3)`` float64 arrays throughout; a single point is a length-3
array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


class EmptyCloudError(ValueError):
    """A filter removed every point."""


class RankDeficientError(ValueError):
    """Rigid fit source is collinear or coincident."""

    def __init__(self, rank: int):
        super().__init__(f"degenerate source point set: rank {rank} < 2 (collinear or coincident)")
        self.rank = rank


# ---------------------------------------------------------------- SE(3)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite rigid transform")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal with det +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, pivot=None) -> "RigidTransform":
        """Rotation by ``angle`` about the line through ``pivot`` along ``axis``."""
        R = axis_angle_matrix(axis, angle)
        p = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=np.float64)
        return cls(R, p - R @ p)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def as_3x4(self) -> list[float]:
        return self.matrix()[:3].reshape(-1).tolist()

    def angle(self) -> float:
        return rotation_angle(self.rotation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
    return _reorthonormalize(R)


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


def rotation_angle(R: np.ndarray) -> float:
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    # arccos loses precision near 0; recover the angle from the skew part instead
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(s, c))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    return RigidTransform(_reorthonormalize(R) if _drifted(R) else R,
                          a.rotation @ b.translation + a.translation)


def _drifted(R: np.ndarray) -> bool:
    return np.abs(R.T @ R - np.eye(3)).max() > 1e-12


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation)


def apply(t: RigidTransform, points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return p @ t.rotation.T + t.translation


# ---------------------------------------------------------------- clouds


@dataclass(frozen=True)
class ScenePointCloud:
    points: np.ndarray
    colors: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        lab = (np.full((len(pts), 2), -1, dtype=np.int32) if self.labels is None
               else np.asarray(self.labels, dtype=np.int32).reshape(-1, 2))
        if not (len(pts) == len(col) == len(lab)):
            raise ValueError(f"length mismatch: points {len(pts)}, colors {len(col)}, labels {len(lab)}")
        if len(pts) < 1:
            raise EmptyCloudError("scene point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite point coordinates")
        if col.min() < 0.0 or col.max() > 1.0:
            raise ValueError("colors must lie in [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, keep) -> "ScenePointCloud":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        if keep.size == 0:
            raise EmptyCloudError("filter removed every point")
        return ScenePointCloud(self.points[keep], self.colors[keep], self.labels[keep])


@dataclass(frozen=True)
class QuerySet:
    tool: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tool", np.asarray(self.tool, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64).reshape(-1, 3))
        if len(self.target) < 1:
            raise ValueError("query set needs at least one target point")

    @property
    def n_tool(self) -> int:
        return len(self.tool)

    @property
    def n_target(self) -> int:
        return len(self.target)

    @property
    def points(self) -> np.ndarray:
        return np.concatenate([self.tool, self.target])

    @property
    def role_mask(self) -> np.ndarray:
        """1 for tool rows, 0 for target rows, in ``points`` order."""
        return np.concatenate([np.ones(self.n_tool, np.int32), np.zeros(self.n_target, np.int32)])


# ---------------------------------------------------------------- camera


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def looking_at(cls, eye, target, up=(0.0, 0.0, 1.0), fx=500.0, fy=500.0,
                   width=640, height=480) -> "PinholeCamera":
        """Camera at ``eye`` whose optical (+z) axis points at ``target``; image y points down."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z], axis=1)
        return cls(fx, fy, width / 2.0, height / 2.0, width, height, RigidTransform(R, eye))


def project(points, cam: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """World points to ``(pixels (N,2), depths (N,))``; the inverse of :func:`lift_to_3d`."""
    pc = apply(invert(cam.pose), points)
    d = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pc[:, 0] / d + cam.cx
        v = cam.fy * pc[:, 1] / d + cam.cy
    return np.stack([u, v], axis=1), d


def in_image(pixels: np.ndarray, cam: PinholeCamera) -> np.ndarray:
    u, v = pixels[:, 0], pixels[:, 1]
    return (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)


@dataclass(frozen=True)
class LiftResult:
    points: np.ndarray
    kept: np.ndarray
    dropped: int


def lift_to_3d(pixels, depths, cam: PinholeCamera) -> LiftResult:
    """Back-project pixels with metric depth into world coordinates.

    Points with non-positive depth are dropped; ``kept`` indexes the inputs
    that survived and ``dropped`` counts the rest.
    """
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    if len(px) != len(d):
        raise ValueError(f"{len(px)} pixels but {len(d)} depths")
    kept = np.flatnonzero(d > 0)
    u, v, dk = px[kept, 0], px[kept, 1], d[kept]
    pc = np.stack([(u - cam.cx) * dk / cam.fx, (v - cam.cy) * dk / cam.fy, dk], axis=1)
    return LiftResult(apply(cam.pose, pc), kept, int(len(d) - len(kept)))


# ---------------------------------------------------------------- cleaning


def radius_components(points: np.ndarray, radius: float) -> np.ndarray:
    """Connected-component id per point under ``dist <= radius`` adjacency.

    Neighbors are found through a uniform grid of cell size ``radius`` so
    each point only inspects the 27 surrounding cells.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    cells = np.floor((pts - pts.min(axis=0)) / radius).astype(np.int64)
    grid: dict[tuple, list[int]] = {}
    for i, c in enumerate(map(tuple, cells)):
        grid.setdefault(c, []).append(i)
    for c in grid:
        grid[c] = np.array(grid[c])

    parent = np.arange(n)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    r2 = radius * radius
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    for cell, members in grid.items():
        cand = [grid[k] for off in offsets
                if (k := (cell[0] + off[0], cell[1] + off[1], cell[2] + off[2])) in grid]
        cand = np.concatenate(cand)
        d2 = ((pts[members][:, None, :] - pts[cand][None, :, :]) ** 2).sum(-1)
        ii, jj = np.nonzero(d2 <= r2)
        for a, b in zip(members[ii], cand[jj]):
            if a < b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(n)])


def remove_isolated_clusters(cloud: ScenePointCloud, radius: float, min_cluster: int) -> ScenePointCloud:
    if radius <= 0 or min_cluster < 1:
        raise ValueError("radius must be > 0 and min_cluster >= 1")
    if min_cluster == 1:
        return cloud
    comp = radius_components(cloud.points, radius)
    _, inverse, counts = np.unique(comp, return_inverse=True, return_counts=True)
    keep = counts[inverse] >= min_cluster
    if not keep.any():
        raise EmptyCloudError(
            f"cluster filter (radius={radius}, min_cluster={min_cluster}) removed every point")
    return cloud.subset(keep)


def crop_interaction_region(cloud: ScenePointCloud, center, radius: float) -> ScenePointCloud:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    d = np.linalg.norm(cloud.points - np.asarray(center, dtype=np.float64), axis=1)
    keep = d <= radius
    if not keep.any():
        raise EmptyCloudError(f"no points within {radius} m of the interaction center")
    return cloud.subset(keep)


# ---------------------------------------------------------------- registration


def fit_rigid(src, dst, weights=None) -> RigidTransform:
    """Weighted least-squares rigid transform taking ``src`` onto ``dst``.

    Minimizes ``sum_i w_i ||R src_i + t - dst_i||^2`` over rotations with
    det +1 (no scale). Raises :class:`RankDeficientError` when the weighted
    source is collinear or coincident.
    """
    P = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    Q = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if P.shape != Q.shape:
        raise ValueError(f"src {P.shape} and dst {Q.shape} differ")
    if len(P) < 3:
        raise RankDeficientError(max(len(P) - 1, 0))
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != len(P) or w.min() < 0 or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per point, with positive sum")
    w = w / w.sum()
    mu_p = w @ P
    mu_q = w @ Q
    Pc = P - mu_p
    Qc = Q - mu_q

    sw = np.sqrt(w)[:, None]
    s = np.linalg.svd(Pc * sw, compute_uv=False)
    scale = max(s[0], 1e-300)
    rank = int(np.sum(s > 1e-9 * max(scale, 1.0)))
    if rank < 2:
        raise RankDeficientError(rank)

    cov = (Qc * w[:, None]).T @ Pc  # sum w q p^T
    U, _, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    R = _reorthonormalize(R) if _drifted(R) else R
    return RigidTransform(R, mu_q - R @ mu_p)
