import numpy as np
import pytest

from reenact.camera import (CameraIntrinsics, compute_normals, project,
                            project_many, unproject, unproject_depth_map)
from reenact.errors import BehindCameraError

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def test_project_optical_axis():
    assert np.allclose(project(np.array([0.0, 0.0, 1.0]), K), [320.0, 240.0])


def test_project_offset():
    assert np.allclose(project(np.array([0.1, 0.0, 1.0]), K), [370.0, 240.0])


def test_project_behind_camera_raises():
    with pytest.raises(BehindCameraError):
        project(np.array([0.0, 0.0, -0.5]), K)
    with pytest.raises(BehindCameraError):
        project(np.array([0.0, 0.0, 0.0]), K)


def test_project_unproject_roundtrip():
    rng = np.random.default_rng(0)
    max_err = 0.0
    for _ in range(10_000):
        p = rng.uniform([-1, -1, 0.2], [1, 1, 5.0])
        uv = project(p, K)
        q = unproject(uv, p[2], K)
        max_err = max(max_err, np.abs(q - p).max())
    assert max_err < 1e-9


def test_project_many_matches_scalar():
    rng = np.random.default_rng(1)
    pts = rng.uniform([-1, -1, 0.2], [1, 1, 5.0], size=(100, 3))
    uv, valid = project_many(pts, K)
    assert valid.all()
    for i in range(len(pts)):
        assert np.allclose(uv[i], project(pts[i], K))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1, fy=500, cx=320, cy=240, width=640, height=480)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=500, fy=500, cx=700, cy=240, width=640, height=480)


def test_normals_fronto_parallel_plane():
    depth = np.full((48, 64), 1.5)
    k = CameraIntrinsics(fx=80, fy=80, cx=32, cy=24, width=64, height=48)
    normals, valid = compute_normals(depth, k)
    assert valid[1:-1, 1:-1].all()
    err = np.abs(normals[valid] - np.array([0.0, 0.0, -1.0])).max()
    assert err < 1e-3


def test_normals_tilted_plane():
    # plane tilted 30 degrees about the x axis: z = z0 + tan(30deg) * y_cam
    k = CameraIntrinsics(fx=200, fy=200, cx=32, cy=24, width=64, height=48)
    slope = np.tan(np.radians(30.0))
    v = np.arange(48)[:, None]
    # z (1 - slope*(v-cy)/fy) = z0  => z = z0 / (1 - slope*(v-cy)/fy)
    depth = 1.2 / (1.0 - slope * (v - k.cy) / k.fy) * np.ones((48, 64))
    normals, valid = compute_normals(depth, k)
    expected = np.array([0.0, slope, -1.0])
    expected /= np.linalg.norm(expected)
    angles = np.degrees(np.arccos(np.clip(normals[valid] @ expected, -1, 1)))
    assert np.max(angles) < 0.5


def test_normals_all_invalid():
    depth = np.zeros((20, 30))
    k = CameraIntrinsics(fx=50, fy=50, cx=15, cy=10, width=30, height=20)
    _, valid = compute_normals(depth, k)
    assert not valid.any()


def test_unproject_depth_map_matches_scalar():
    rng = np.random.default_rng(2)
    depth = rng.uniform(0.5, 2.0, size=(K.height, K.width))
    pts = unproject_depth_map(depth, K)
    for _ in range(20):
        v = rng.integers(0, K.height)
        u = rng.integers(0, K.width)
        assert np.allclose(pts[v, u], unproject((u, v), depth[v, u], K))
