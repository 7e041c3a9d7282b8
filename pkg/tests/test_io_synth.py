import json

import numpy as np
import pytest

from affordflow import io
from affordflow.geometry import RigidTransform, apply
from affordflow.instruction import Instruction, render
from affordflow.numerics.rng import seeded_rng
from affordflow.synth.dataset import (
    DatasetConfig,
    GroundingFailure,
    build_dataset,
    generate_sample,
    moving_hinge_distances,
    read_dataset,
    sample_queries,
    split_counts,
    window_clips,
)
from affordflow.synth.motion import AFFORDANCES, MotionProgram, TimestampError, roll_out_keyframes, roll_out_motion
from affordflow.synth.scenes import HELDOUT_RANGES, TRAIN_RANGES, generate_scene


def test_container_round_trip(tmp_path):
    recs = [{"name": "a", "meta": {"x": 1}, "arrays": {"f": np.arange(6, dtype=np.float32).reshape(2, 3),
                                                      "i": np.array([1, -2], np.int32)}}]
    io.write_container(tmp_path / "c", recs, {"kind": "test"})
    hdr, back = io.read_container(tmp_path / "c")
    assert hdr == {"kind": "test"}
    assert back[0]["meta"] == {"x": 1}
    assert back[0]["arrays"]["f"].dtype == np.float32
    np.testing.assert_array_equal(back[0]["arrays"]["f"], recs[0]["arrays"]["f"])
    np.testing.assert_array_equal(back[0]["arrays"]["i"], [1, -2])


def test_container_integrity_and_version(tmp_path):
    path = io.write_container(tmp_path / "c", [{"name": "a", "arrays": {"f": np.ones(4)}}])
    blob = (path / "data.bin").read_bytes()
    (path / "data.bin").write_bytes(blob[:-4])
    with pytest.raises(io.IntegrityError):
        io.read_container(path)
    (path / "data.bin").write_bytes(blob)
    man = json.loads((path / "manifest.json").read_text())
    man["version"] = 99
    (path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(io.VersionError):
        io.read_container(path)
    with pytest.raises(io.ContainerError):
        io.read_container(tmp_path / "missing")


def test_instruction_vocabulary():
    assert render("open", "gripper", "oven") == "open the oven"
    assert "cup" in render("pour", "cup", "bowl") and "bowl" in render("pour", "cup", "bowl")
    with pytest.raises(ValueError):
        Instruction("juggle", "gripper", "ball")


def test_motion_program_translate_stops():
    p = MotionProgram("push", "translate", ((2, -1),), velocity=np.array([0.1, 0, 0]), stop_distance=0.05)
    np.testing.assert_allclose(p.transform_at(0.3).translation, [0.03, 0, 0])
    np.testing.assert_allclose(p.transform_at(2.0).translation, [0.05, 0, 0])


def test_motion_program_rotation_clamped_and_between():
    p = MotionProgram("open", "rotate", ((2, 1),), axis=np.array([0, 0, 1.0]), pivot=np.array([1.0, 0, 0]),
                      omega=0.5, lower=0.0, upper=0.6)
    assert p.angle_at(10.0) == pytest.approx(0.6)
    comp = p.between(0.2, 0.8) @ p.between(0.0, 0.2)
    np.testing.assert_allclose(comp.matrix(), p.transform_at(0.8).matrix(), atol=1e-12)


def test_roll_out_moves_only_moving_labels():
    p = MotionProgram("pickup", "translate", ((3, -1),), velocity=np.array([0, 0, 0.1]))
    pts = np.zeros((3, 3))
    labels = np.array([[3, 0], [3, 2], [4, 0]])
    seq = roll_out_motion(p, pts, labels, [0.0, 0.5, 1.0], [1, 1, 0])
    np.testing.assert_allclose(seq.steps[:2, :, 2], 0.05)
    np.testing.assert_array_equal(seq.steps[2], 0.0)
    np.testing.assert_allclose(seq.keyframes(pts)[0, -1], [0, 0, 0.1])
    with pytest.raises(TimestampError):
        roll_out_keyframes(p, pts, labels, [0.5, 0.2])
    with pytest.raises(TimestampError):
        roll_out_keyframes(p, pts, labels, [0.0, 99.0])


def test_split_counts_and_query_sampling():
    assert split_counts(128) == (96, 32)
    rng = seeded_rng(0)
    qs = sample_queries(np.random.default_rng(0).normal(size=(200, 3)), np.ones((10, 3)), 128, rng=rng)
    assert qs.queries.n_tool == 96 and qs.queries.n_target == 32
    assert qs.with_replacement  # 32 from 10 target points
    assert len(np.unique(qs.tool_index)) == 96
    with pytest.raises(GroundingFailure):
        sample_queries(np.zeros((0, 3)), np.ones((4, 3)), 8)


def test_window_clips_stride_and_short_input():
    # 1.5 s clips, 0.5 s stride, keyframes every 0.5 s
    w = window_clips(3.0, 30.0)
    assert w.clips == [(0, 15, 30, 45), (15, 30, 45, 60), (30, 45, 60, 75), (45, 60, 75, 90)]
    short = window_clips(1.0, 30.0)
    assert len(short) == 0 and short.warnings


@pytest.mark.parametrize("kind", AFFORDANCES)
def test_generated_sample_consistency(kind):
    s = generate_sample(kind, 0, 0, DatasetConfig())
    assert s.instruction.action == kind
    assert s.gt_flow.steps.shape == (128, 3, 3)
    assert s.queries.n_tool == 96 and s.queries.n_target == 32
    assert np.all(np.isfinite(s.scene.points))
    moving = s.moving_part_mask()
    assert moving.any(), "every task moves something"
    # non-moving queries are static
    np.testing.assert_array_equal(s.gt_flow.steps[~moving], 0.0)
    # moving queries share one rigid motion: keyframes j -> j+1 fit exactly
    from affordflow.geometry import fit_rigid
    kf = s.gt_flow.keyframes(s.queries.points)[moving]
    for j in range(s.gt_flow.m):
        if np.linalg.matrix_rank(kf[:, j] - kf[:, j].mean(0)) < 2:
            continue
        t = fit_rigid(kf[:, j], kf[:, j + 1])
        np.testing.assert_allclose(apply(t, kf[:, j]), kf[:, j + 1], atol=1e-9)


def test_hinge_samples_move_more_far_from_axis():
    s = generate_sample("open", 0, 1, DatasetConfig())
    d, moving = moving_hinge_distances(s)
    mag = np.linalg.norm(s.gt_flow.steps, axis=-1).mean(-1)
    from scipy.stats import spearmanr
    assert spearmanr(d[moving], mag[moving]).statistic > 0.99


def test_heldout_scale_band_disjoint():
    for seed in range(20):
        assert not (0.95 <= TRAIN_RANGES.draw_scale(seeded_rng(seed)) <= 1.05)
        assert 0.95 <= HELDOUT_RANGES.draw_scale(seeded_rng(seed)) <= 1.05


def test_dataset_container_round_trip(tmp_path):
    cfg = DatasetConfig(samples_per_kind={"open": 1, "pour": 1}, n_queries=16)
    samples = build_dataset(cfg, 3, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert len(back) == len(samples) == 2
    for a, b in zip(samples, back):
        assert a.instruction == b.instruction
        np.testing.assert_array_equal(a.gt_flow.steps.astype(np.float32), b.gt_flow.steps)
        np.testing.assert_array_equal(a.queries.points.astype(np.float32), b.queries.points)
    # re-writing what was read is bit-exact
    from affordflow.synth.dataset import write_dataset
    hdr, _ = io.read_container(tmp_path / "d")
    write_dataset(tmp_path / "e", back, hdr)
    assert (tmp_path / "d" / "data.bin").read_bytes() == (tmp_path / "e" / "data.bin").read_bytes()


def test_generation_is_deterministic():
    a = generate_sample("pickup", 5, 2, DatasetConfig())
    b = generate_sample("pickup", 5, 2, DatasetConfig())
    np.testing.assert_array_equal(a.scene.points, b.scene.points)
    np.testing.assert_array_equal(a.gt_flow.steps, b.gt_flow.steps)


def test_scene_without_handle():
    setup = generate_scene("open", seeded_rng(0), with_handle=False)
    oven = setup.registry[setup.target_id]
    assert "handle" not in oven.parts
