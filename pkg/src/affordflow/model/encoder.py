"""Hierarchical set-abstraction encoder-decoder over scene + query tokens.

Index computations (sampling, grouping, interpolation neighbors) depend only
on coordinates, so they run in plain numpy; features flow through the tape.
"""

from __future__ import annotations

import numpy as np

from ..numerics import autograd as ag
from ..numerics.nn import MLP, Module


class TokenCountError(ValueError):
    pass


def farthest_point_sample(xyz: np.ndarray, n: int) -> np.ndarray:
    """Batched FPS, ``xyz`` (B, N, 3) -> indices (B, n).

    Starts from the point nearest the cloud centroid so the selected set does
    not depend on input order.
    """
    B, N, _ = xyz.shape
    centroid = xyz.mean(axis=1, keepdims=True)
    start = np.argmin(((xyz - centroid) ** 2).sum(-1), axis=1)
    idx = np.empty((B, n), dtype=np.int64)
    idx[:, 0] = start
    rows = np.arange(B)
    dist = ((xyz - xyz[rows, start][:, None]) ** 2).sum(-1)
    for j in range(1, n):
        nxt = np.argmax(dist, axis=1)
        idx[:, j] = nxt
        dist = np.minimum(dist, ((xyz - xyz[rows, nxt][:, None]) ** 2).sum(-1))
    return idx


def ball_group(xyz: np.ndarray, centers: np.ndarray, radius: float, k: int) -> np.ndarray:
    """Up to ``k`` nearest points within ``radius`` of each center, (B, M, k).

    Slots without a point inside the radius repeat the nearest point, which
    leaves a max pool unchanged.
    """
    d2 = ((centers[:, :, None, :] - xyz[:, None, :, :]) ** 2).sum(-1)  # (B, M, N)
    k_eff = min(k, xyz.shape[1])
    part = np.argpartition(d2, k_eff - 1, axis=-1)[..., :k_eff]
    pd = np.take_along_axis(d2, part, axis=-1)
    order = np.argsort(pd, axis=-1, kind="stable")
    nn = np.take_along_axis(part, order, axis=-1)
    nd = np.take_along_axis(pd, order, axis=-1)
    nn = np.where(nd <= radius * radius, nn, nn[..., :1])
    if k_eff < k:
        nn = np.concatenate([nn, np.repeat(nn[..., :1], k - k_eff, axis=-1)], axis=-1)
    return nn


def three_nn_weights(dst: np.ndarray, src: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance weights from the 3 nearest ``src`` points to each ``dst`` point."""
    d2 = ((dst[:, :, None, :] - src[:, None, :, :]) ** 2).sum(-1)
    k = min(3, src.shape[1])
    part = np.argpartition(d2, k - 1, axis=-1)[..., :k]
    pd = np.take_along_axis(d2, part, axis=-1)
    order = np.argsort(pd, axis=-1, kind="stable")
    idx = np.take_along_axis(part, order, axis=-1)
    dist = np.sqrt(np.take_along_axis(pd, order, axis=-1))
    w = 1.0 / (dist + 1e-8)
    return idx, w / w.sum(axis=-1, keepdims=True)


def _flat_index(idx: np.ndarray, n_per_batch: int) -> np.ndarray:
    B = idx.shape[0]
    return idx + (np.arange(B) * n_per_batch).reshape((B,) + (1,) * (idx.ndim - 1))


def gather(feats, idx: np.ndarray):
    """``feats`` (B, N, C) gathered at per-batch ``idx`` (B, ...) -> (B, ..., C)."""
    B, N, C = feats.shape
    flat = ag.reshape(feats, (B * N, C))
    return ag.take_rows(flat, _flat_index(idx, N))


class Level:
    """Precomputed sampling/grouping/interpolation indices for one level."""

    def __init__(self, xyz: np.ndarray, n_centroids: int, radius: float, k: int):
        self.center_idx = farthest_point_sample(xyz, n_centroids)
        B = xyz.shape[0]
        self.centers = xyz[np.arange(B)[:, None], self.center_idx]
        self.group_idx = ball_group(xyz, self.centers, radius, k)
        rel = xyz[np.arange(B)[:, None, None], self.group_idx] - self.centers[:, :, None, :]
        self.rel = rel / radius
        self.up_idx, self.up_w = three_nn_weights(xyz, self.centers)


class PointEncoder(Module):
    def __init__(self, d: int, ratios, radii, k: int, rng, activation: str = "gelu",
                 global_context: bool = True):
        self.ratios = tuple(ratios)
        self.radii = tuple(radii)
        self.k = k
        self.down = [MLP([d + 3, d, d], rng, activation) for _ in ratios]
        self.up = [MLP([2 * d, d, d], rng, activation) for _ in ratios]
        # scene-wide max-pooled feature mixed into the coarsest level, so every
        # point sees context beyond its grouping radius
        self.glob = MLP([2 * d, d, d], rng, activation) if global_context else None

    def min_tokens(self) -> int:
        n = 3
        for r in reversed(self.ratios):
            n = int(np.ceil(n / r))
        return n

    def plan(self, xyz: np.ndarray) -> list[Level]:
        N = xyz.shape[1]
        if N < self.min_tokens():
            raise TokenCountError(f"encoder needs at least {self.min_tokens()} tokens, got {N}")
        levels, cur, n = [], xyz, N
        for ratio, radius in zip(self.ratios, self.radii):
            n = max(3, int(round(n * ratio)))
            lv = Level(cur, n, radius, self.k)
            levels.append(lv)
            cur = lv.centers
        return levels

    def __call__(self, feats, xyz: np.ndarray, levels: list[Level] | None = None):
        """``feats`` (B, N, d) at ``xyz`` (B, N, 3) -> features (B, N, d) at full resolution."""
        levels = levels or self.plan(xyz)
        skips = [feats]
        cur = feats
        for lv, mlp in zip(levels, self.down):
            grouped = gather(cur, lv.group_idx)  # (B, M, k, d)
            h = mlp(ag.concat([grouped, ag.Tensor(lv.rel)], axis=-1))
            cur = ag.max_pool(h, axis=2)
            skips.append(cur)
        if self.glob is not None:
            g = ag.broadcast_to(ag.max_pool(cur, axis=1, keepdims=True), cur.shape)
            cur = self.glob(ag.concat([cur, g], axis=-1))
        for i in range(len(levels) - 1, -1, -1):
            lv = levels[i]
            neigh = gather(cur, lv.up_idx)  # (B, N_i, 3, d)
            interp = ag.sum_(neigh * ag.Tensor(lv.up_w[..., None]), axis=2)
            cur = self.up[i](ag.concat([interp, skips[i]], axis=-1))
        return cur
