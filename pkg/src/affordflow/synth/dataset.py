"""Clip windowing, query sampling, sample assembly and dataset containers."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import io
from ..geometry import (
    EmptyCloudError,
    PinholeCamera,
    QuerySet,
    ScenePointCloud,
    crop_interaction_region,
    in_image,
    lift_to_3d,
    project,
    remove_isolated_clusters,
)
from ..instruction import Instruction
from ..numerics.rng import seeded_rng
from .motion import AFFORDANCES, DisplacementSequence, roll_out_keyframes
from .scenes import (
    TRAIN_RANGES,
    SceneRanges,
    SceneSetup,
    generate_scene,
    hinge_axis_distance,
    region_points,
    registry_at,
    scene_cloud,
)

log = logging.getLogger(__name__)

CLIP_SECONDS = 1.5
CLIP_STRIDE = 0.5
FRAME_OFFSETS = (0.0, 0.5, 1.0, 1.5)


class GroundingFailure(RuntimeError):
    """A tool or target region came back empty."""


class BuildError(RuntimeError):
    pass


@dataclass
class ClipWindows:
    clips: list
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.clips)

    def __getitem__(self, i):
        return self.clips[i]

    def __iter__(self):
        return iter(self.clips)


def window_clips(duration: float, frame_rate: float) -> ClipWindows:
    """Frame-index quadruples of sliding 1.5 s clips with a 0.5 s stride."""
    if duration < CLIP_SECONDS:
        msg = f"trajectory of {duration:.3f} s is shorter than one {CLIP_SECONDS} s clip"
        log.warning(msg)
        return ClipWindows([], [msg])
    n = int(np.floor((duration - CLIP_SECONDS) / CLIP_STRIDE + 1e-9)) + 1
    clips = []
    for c in range(n):
        start = c * CLIP_STRIDE
        clips.append(tuple(int(round((start + off) * frame_rate)) for off in FRAME_OFFSETS))
    return ClipWindows(clips)


@dataclass
class QuerySample:
    queries: QuerySet
    tool_index: np.ndarray
    target_index: np.ndarray
    with_replacement: bool


def split_counts(total: int, ratio=(3, 1)) -> tuple[int, int]:
    n_tool = int(round(total * ratio[0] / (ratio[0] + ratio[1])))
    return n_tool, total - n_tool


def _draw(rng, n_avail: int, n: int) -> tuple[np.ndarray, bool]:
    if n <= n_avail:
        return rng.choice(n_avail, size=n, replace=False), False
    return rng.choice(n_avail, size=n, replace=True), True


def sample_queries(tool_region, target_region, total: int = 128, ratio=(3, 1),
                   rng: np.random.Generator | None = None) -> QuerySample:
    """Draw ``total`` queries split tool:target by ``ratio``.

    Sampling is uniform without replacement when a region is large enough,
    with replacement otherwise (flagged on the result).
    """
    tool_region = np.asarray(tool_region, dtype=np.float64).reshape(-1, 3)
    target_region = np.asarray(target_region, dtype=np.float64).reshape(-1, 3)
    if len(tool_region) == 0:
        raise GroundingFailure("tool region is empty")
    if len(target_region) == 0:
        raise GroundingFailure("target region is empty")
    rng = rng if rng is not None else seeded_rng(0)
    n_tool, n_target = split_counts(total, ratio)
    ti, rep_t = _draw(rng, len(tool_region), n_tool)
    gi, rep_g = _draw(rng, len(target_region), n_target)
    return QuerySample(QuerySet(tool_region[ti], target_region[gi]), ti, gi, rep_t or rep_g)


# ---------------------------------------------------------------- samples


@dataclass
class AffordanceSample:
    scene: ScenePointCloud
    queries: QuerySet
    instruction: Instruction
    gt_flow: DisplacementSequence
    meta: dict = field(default_factory=dict)

    @property
    def n_queries(self) -> int:
        return self.queries.n_tool + self.queries.n_target

    def query_labels(self) -> np.ndarray:
        return np.asarray(self.meta.get("query_labels", np.full((self.n_queries, 2), -1)), dtype=np.int32)

    def moving_part_mask(self) -> np.ndarray:
        """Queries rigidly attached to the moving body (from generation-time labels)."""
        return np.asarray(self.meta.get("query_moving", np.zeros(self.n_queries)), dtype=bool)


@dataclass
class DatasetConfig:
    samples_per_kind: dict = field(default_factory=lambda: {k: 4 for k in AFFORDANCES})
    n_queries: int = 128
    tool_ratio: tuple = (3, 1)
    frame_rate: float = 30.0
    sensor_sim: bool = False
    pixel_noise: float = 0.0
    depth_noise: float = 0.0
    n_outliers: int = 6
    cluster_radius: float = 0.07  # unvalidated default
    min_cluster: int = 10  # unvalidated default
    crop_radius: float = 0.55  # unvalidated default
    ranges: SceneRanges = field(default_factory=lambda: TRAIN_RANGES)
    camera_eye: tuple = (-0.25, 0.0, 0.95)
    camera_target: tuple = (0.6, 0.0, 0.05)
    max_skip_fraction: float = 0.10

    def camera(self) -> PinholeCamera:
        return PinholeCamera.looking_at(self.camera_eye, self.camera_target, fx=420.0, fy=420.0,
                                        width=640, height=480)


def clean_scene(cloud: ScenePointCloud, center, cfg: DatasetConfig) -> ScenePointCloud:
    cloud = remove_isolated_clusters(cloud, cfg.cluster_radius, cfg.min_cluster)
    return crop_interaction_region(cloud, center, cfg.crop_radius)


def simulate_sensor(points: np.ndarray, cam: PinholeCamera, rng, pixel_noise: float,
                    depth_noise: float) -> tuple[np.ndarray, np.ndarray]:
    """Project to (pixel, depth), perturb, and lift back; returns (points, kept index)."""
    px, d = project(points, cam)
    if pixel_noise > 0:
        px = px + rng.normal(0, pixel_noise, size=px.shape)
    if depth_noise > 0:
        d = d + rng.normal(0, depth_noise, size=d.shape)
    valid = np.flatnonzero(in_image(px, cam) & np.isfinite(d))
    lifted = lift_to_3d(px[valid], d[valid], cam)
    return lifted.points, valid[lifted.kept]


def regions_for(setup: SceneSetup, registry: list):
    """Tool and target regions (points, labels) used for training queries."""
    tool = region_points(registry, setup.tool_id)
    target = region_points(registry, setup.target_id)
    return tool, target


def make_sample(setup: SceneSetup, clip: tuple, frame_rate: float, cfg: DatasetConfig,
                rng: np.random.Generator, meta: dict | None = None) -> AffordanceSample:
    """Assemble one sample from a scene setup and a clip of four frame indices.

    Stages: grounding regions, query sampling, motion roll-out, optional
    sensor simulation, cleaning.
    """
    stage = "ground"
    try:
        times = np.asarray(clip, dtype=np.float64) / frame_rate
        reg0 = registry_at(setup, times[0])
        (tool_pts, tool_lab), (tgt_pts, tgt_lab) = regions_for(setup, reg0)
        stage = "sample_queries"
        qs = sample_queries(tool_pts, tgt_pts, cfg.n_queries, cfg.tool_ratio, rng)
        q_points = qs.queries.points
        q_labels = np.concatenate([tool_lab[qs.tool_index], tgt_lab[qs.target_index]])
        role = qs.queries.role_mask
        stage = "roll_out"
        frames = roll_out_keyframes(setup.program, q_points, q_labels, times)
        stage = "scene"
        cloud = scene_cloud(reg0, setup.executor_id, rng, cfg.n_outliers)
        if cfg.sensor_sim:
            stage = "sensor"
            cam = cfg.camera()
            pts, kept = simulate_sensor(cloud.points, cam, rng, cfg.pixel_noise, cfg.depth_noise)
            cloud = ScenePointCloud(pts, cloud.colors[kept], cloud.labels[kept])
            flat = frames.reshape(-1, 3)
            lifted, kept_q = simulate_sensor(flat, cam, rng, cfg.pixel_noise, cfg.depth_noise)
            if len(kept_q) != len(flat):
                raise GroundingFailure(f"{len(flat) - len(kept_q)} query observations left the image")
            frames = lifted.reshape(frames.shape)
        stage = "clean"
        cloud = clean_scene(cloud, frames[:, 0].mean(axis=0), cfg)
    except (GroundingFailure, EmptyCloudError, ValueError) as exc:
        raise BuildError(f"stage {stage}: {exc}") from exc

    moving = setup.program.moving_mask(q_labels)
    queries = QuerySet(frames[role == 1, 0], frames[role == 0, 0])
    flow = DisplacementSequence(np.diff(frames, axis=1), role)
    info = {
        "kind": setup.kind,
        "clip_frames": [int(c) for c in clip],
        "timestamps": times.tolist(),
        "query_labels": q_labels.tolist(),
        "query_moving": moving.astype(int).tolist(),
        "queries_with_replacement": bool(qs.with_replacement),
        "scale": setup.scale,
        "tool_id": setup.tool_id,
        "target_id": setup.target_id,
        "object_names": [o.name for o in setup.registry],
    }
    if setup.program.mode == "rotate" and setup.kind in ("open", "close"):
        info["hinge_axis"] = setup.program.axis.tolist()
        info["hinge_pivot"] = setup.program.pivot.tolist()
    info.update(meta or {})
    return AffordanceSample(cloud, queries, setup.instruction, flow, info)


def sample_seed_rngs(seed: int, index: int):
    """(scene rng, sample rng) for item ``index``; independent of build order."""
    return seeded_rng(seed, index, 0), seeded_rng(seed, index, 1)


def generate_sample(kind: str, seed: int, index: int, cfg: DatasetConfig) -> AffordanceSample:
    scene_rng, rng = sample_seed_rngs(seed, index)
    setup = generate_scene(kind, scene_rng, cfg.ranges)
    clips = window_clips(setup.program.duration, cfg.frame_rate)
    c = int(rng.integers(len(clips)))
    return make_sample(setup, clips[c], cfg.frame_rate, cfg, rng,
                       {"scene_id": f"{kind}-{seed}-{index}", "clip_index": c, "index": index})


def build_samples(cfg: DatasetConfig, seed: int) -> list[AffordanceSample]:
    jobs = []
    for kind in AFFORDANCES:
        for _ in range(int(cfg.samples_per_kind.get(kind, 0))):
            jobs.append(kind)
    samples, skipped = [], []
    for index, kind in enumerate(jobs):
        try:
            samples.append(generate_sample(kind, seed, index, cfg))
        except BuildError as exc:
            log.warning("sample %d (%s) skipped: %s", index, kind, exc)
            skipped.append((index, kind, str(exc)))
    if jobs and len(skipped) > cfg.max_skip_fraction * len(jobs):
        raise BuildError(f"{len(skipped)}/{len(jobs)} samples skipped (> "
                         f"{cfg.max_skip_fraction:.0%}); first: {skipped[0]}")
    return samples


# ---------------------------------------------------------------- containers


def sample_to_record(s: AffordanceSample, name: str) -> dict:
    meta = dict(s.meta)
    meta["instruction"] = {"action": s.instruction.action, "tool_desc": s.instruction.tool_desc,
                           "target_desc": s.instruction.target_desc, "raw_text": s.instruction.raw_text}
    return {
        "name": name,
        "meta": meta,
        "arrays": {
            "scene_points": s.scene.points,
            "scene_colors": s.scene.colors,
            "scene_labels": s.scene.labels,
            "queries": s.queries.points,
            "role_mask": s.gt_flow.role_mask,
            "gt_flow": s.gt_flow.steps,
        },
    }


def record_to_sample(rec: dict) -> AffordanceSample:
    a = rec["arrays"]
    meta = dict(rec["meta"])
    ins = meta.pop("instruction")
    role = a["role_mask"].astype(np.int32)
    q = a["queries"].astype(np.float64)
    return AffordanceSample(
        scene=ScenePointCloud(a["scene_points"].astype(np.float64), a["scene_colors"].astype(np.float64),
                              a["scene_labels"]),
        queries=QuerySet(q[role == 1], q[role == 0]),
        instruction=Instruction(**ins),
        gt_flow=DisplacementSequence(a["gt_flow"].astype(np.float64), role),
        meta=meta,
    )


def write_dataset(path, samples: list[AffordanceSample], header: dict | None = None) -> Path:
    records = [sample_to_record(s, f"sample-{i:06d}") for i, s in enumerate(samples)]
    hdr = {"kind": "dataset", "n_samples": len(samples)}
    hdr.update(header or {})
    return io.write_container(path, records, hdr)


def read_dataset(path) -> list[AffordanceSample]:
    header, records = io.read_container(path)
    if header.get("kind") != "dataset":
        raise io.ContainerError(f"{path} is not a dataset container")
    return [record_to_sample(r) for r in records]


def build_dataset(cfg: DatasetConfig, seed: int, out=None):
    """Generate all samples and, when ``out`` is given, write the container there."""
    samples = build_samples(cfg, seed)
    if out is not None:
        hdr = {"seed": int(seed), "config": _config_dict(cfg)}
        write_dataset(out, samples, hdr)
    return samples


def _config_dict(cfg: DatasetConfig) -> dict:
    d = asdict(cfg)
    d["ranges"] = asdict(cfg.ranges)
    return d


def moving_hinge_distances(sample: AffordanceSample) -> tuple[np.ndarray, np.ndarray]:
    """(distance from hinge axis, moving mask) per query for open/close samples."""
    axis = np.asarray(sample.meta["hinge_axis"])
    pivot = np.asarray(sample.meta["hinge_pivot"])
    return hinge_axis_distance(sample.queries.points, axis, pivot), sample.moving_part_mask()
