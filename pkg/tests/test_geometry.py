import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affordflow.geometry import (
    EmptyCloudError,
    PinholeCamera,
    RankDeficientError,
    RigidTransform,
    ScenePointCloud,
    apply,
    compose,
    crop_interaction_region,
    fit_rigid,
    in_image,
    invert,
    lift_to_3d,
    project,
    radius_components,
    remove_isolated_clusters,
    rotation_angle,
)
from affordflow.numerics.rng import seeded_rng

from conftest import random_rotation


def _cloud(points):
    n = len(points)
    return ScenePointCloud(np.asarray(points, float), np.zeros((n, 3)), np.zeros((n, 2), np.int32))


def test_transform_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, 1.1]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), [np.nan, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compose_invert_identity(seed):
    rng = seeded_rng(seed)
    a = RigidTransform(random_rotation(rng), rng.normal(size=3))
    b = RigidTransform(random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(apply(compose(a, b), p), apply(a, apply(b, p)), atol=1e-12)
    np.testing.assert_allclose(apply(invert(a) @ a, p), p, atol=1e-12)


def test_axis_angle_rotates_about_pivot():
    t = RigidTransform.from_axis_angle([0, 0, 1], np.pi / 2, pivot=[1.0, 0, 0])
    np.testing.assert_allclose(apply(t, [[2.0, 0, 0]]), [[1.0, 1.0, 0]], atol=1e-12)
    np.testing.assert_allclose(apply(t, [[1.0, 0, 5.0]]), [[1.0, 0, 5.0]], atol=1e-12)
    assert t.angle() == pytest.approx(np.pi / 2, abs=1e-12)


def test_rotation_angle_small_angles_precise():
    for a in (1e-9, 1e-6, 0.3, 3.0):
        assert rotation_angle(RigidTransform.from_axis_angle([1, 2, 3], a).rotation) == pytest.approx(a, rel=1e-9)


def test_as_3x4_layout():
    t = RigidTransform.from_translation([1, 2, 3])
    assert t.as_3x4() == [1, 0, 0, 1, 0, 1, 0, 2, 0, 0, 1, 3]


def test_fit_rigid_exact_recovery(rng):
    R = random_rotation(rng)
    t = rng.normal(size=3)
    src = rng.normal(size=(20, 3))
    est = fit_rigid(src, src @ R.T + t)
    np.testing.assert_allclose(est.rotation, R, atol=1e-12)
    np.testing.assert_allclose(est.translation, t, atol=1e-12)


def test_fit_rigid_never_reflects(rng):
    # planar source mirrored through its plane: a reflection fits exactly, a rotation must not
    src = np.c_[rng.normal(size=(10, 2)), np.zeros(10)]
    dst = src * [1, 1, -1]
    est = fit_rigid(src, dst)
    assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-12)


def test_fit_rigid_weights_ignore_outlier(rng):
    R = random_rotation(rng)
    src = rng.normal(size=(12, 3))
    dst = src @ R.T
    dst[0] += 5.0
    w = np.ones(12)
    w[0] = 0.0
    est = fit_rigid(src, dst, w)
    np.testing.assert_allclose(est.rotation, R, atol=1e-10)


def test_fit_rigid_degenerate_inputs():
    line = np.outer(np.arange(5.0), [1, 0, 0])
    with pytest.raises(RankDeficientError):
        fit_rigid(line, line)
    with pytest.raises(RankDeficientError):
        fit_rigid(np.zeros((4, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        fit_rigid(np.eye(3), np.eye(3), weights=[1, -1, 1])


def test_project_lift_round_trip(rng):
    cam = PinholeCamera.looking_at([0, 0, 1.0], [0.5, 0, 0])
    pts = rng.uniform([0.3, -0.2, 0], [0.7, 0.2, 0.1], size=(50, 3))
    px, depth = project(pts, cam)
    assert in_image(px, cam).all()
    lifted = lift_to_3d(px, depth, cam)
    assert lifted.dropped == 0
    np.testing.assert_allclose(lifted.points, pts, atol=1e-12)


def test_lift_drops_nonpositive_depth():
    cam = PinholeCamera.looking_at([0, 0, 1.0], [0.5, 0, 0])
    res = lift_to_3d([[10, 10], [20, 20], [30, 30]], [1.0, 0.0, -1.0], cam)
    assert res.dropped == 2 and list(res.kept) == [0]


def test_radius_components_matches_brute_force(rng):
    pts = rng.uniform(0, 1, size=(120, 3))
    r = 0.12
    comp = radius_components(pts, r)
    # brute force flood fill
    adj = np.linalg.norm(pts[:, None] - pts[None], axis=-1) <= r
    label = -np.ones(len(pts), int)
    for s in range(len(pts)):
        if label[s] >= 0:
            continue
        stack = [s]
        label[s] = s
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i] & (label < 0)):
                label[j] = s
                stack.append(j)
    same = comp[:, None] == comp[None]
    same_ref = label[:, None] == label[None]
    assert np.array_equal(same, same_ref)


def test_cluster_filter_and_crop():
    blob = np.random.default_rng(0).normal(0, 0.01, size=(30, 3))
    stray = np.array([[1.0, 1.0, 1.0], [1.005, 1.0, 1.0]])
    c = _cloud(np.r_[blob, stray])
    kept = remove_isolated_clusters(c, 0.05, 5)
    assert len(kept.points) == 30
    with pytest.raises(EmptyCloudError):
        remove_isolated_clusters(_cloud(stray), 0.05, 5)
    crop = crop_interaction_region(c, [0, 0, 0], 0.2)
    assert len(crop.points) == 30
    with pytest.raises(EmptyCloudError):
        crop_interaction_region(c, [5, 5, 5], 0.1)
