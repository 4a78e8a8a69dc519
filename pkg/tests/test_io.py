import numpy as np
import pytest

from reenact import imgio, plyio
from reenact.camera import CameraIntrinsics
from reenact.geometry import RigidTransform, TriMesh
from reenact.meshgen import uv_sphere
from reenact.sequence import (LandmarkTrack, RGBDFrame, SequenceStore,
                              load_sequence, save_sequence)


def test_color_png_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(32, 40, 3)).astype(np.float32)
    p = tmp_path / "c.png"
    imgio.save_color_png(p, img)
    back = imgio.load_color_png(p)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


def test_depth_png_roundtrip_millimeters(tmp_path):
    depth = np.array([[0.0, 1.2345], [0.5004, 3.0]], dtype=np.float32)
    p = tmp_path / "d.png"
    imgio.save_depth_png(p, depth)
    back = imgio.load_depth_png(p)
    assert back[0, 0] == 0.0  # invalid stays invalid
    assert np.abs(back - depth).max() <= 0.5e-3 + 1e-9


def test_pfm_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    for shape in [(7, 5), (6, 4, 3)]:
        data = rng.normal(size=shape).astype(np.float32)
        p = tmp_path / "x.pfm"
        imgio.save_pfm(p, data)
        back = imgio.load_pfm(p)
        assert back.shape == data.shape
        assert (back == data).all()


def test_ply_roundtrip_with_attributes(tmp_path):
    mesh = uv_sphere(0.3, (0, 0, 1), rings=6, segments=8)
    mesh.attributes["mask"] = np.linspace(0, 1, mesh.num_vertices)
    mesh.attributes["weights"] = np.random.default_rng(2).uniform(
        size=(mesh.num_vertices, 3))
    del mesh.attributes["dir"]
    p = tmp_path / "m.ply"
    plyio.save_ply(p, mesh)
    back = plyio.load_ply(p)
    assert np.allclose(back.vertices, mesh.vertices)
    assert (back.faces == mesh.faces).all()
    assert np.allclose(back.normals, mesh.normals)
    assert np.allclose(back.attributes["mask"], mesh.attributes["mask"])
    assert np.allclose(back.attributes["weights"], mesh.attributes["weights"])


def test_ply_ascii_load(tmp_path):
    text = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
0 1 0
3 0 1 2
"""
    p = tmp_path / "a.ply"
    p.write_text(text)
    mesh = plyio.load_ply(p)
    assert mesh.num_vertices == 3
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_ply_write_is_deterministic(tmp_path):
    mesh = uv_sphere(0.3, (0, 0, 1), rings=5, segments=7)
    p1, p2 = tmp_path / "a.ply", tmp_path / "b.ply"
    plyio.save_ply(p1, mesh)
    plyio.save_ply(p2, mesh)
    assert p1.read_bytes() == p2.read_bytes()


def test_obj_roundtrip(tmp_path):
    mesh = uv_sphere(0.2, (0, 0, 1), rings=4, segments=6)
    p = tmp_path / "m.obj"
    plyio.save_obj(p, mesh)
    back = plyio.load_obj(p)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-8)
    assert (back.faces == mesh.faces).all()


def test_sequence_roundtrip(tmp_path):
    K = CameraIntrinsics(fx=100, fy=100, cx=16, cy=12, width=32, height=24)
    rng = np.random.default_rng(3)
    frames = []
    for i in range(3):
        frames.append(RGBDFrame(
            color=rng.uniform(0, 1, (24, 32, 3)).astype(np.float32),
            depth=(rng.uniform(0.5, 2, (24, 32)) * (rng.uniform(size=(24, 32)) > 0.2)).astype(np.float32),
            intrinsics=K, time_index=i))
    poses = [RigidTransform.from_axis_angle(rng.normal(size=3) * 0.1, rng.normal(size=3))
             for _ in range(3)]
    pts = rng.uniform(0, 20, size=(3, 2, 2))
    pts[1, 0] = np.nan
    seq = SequenceStore(frames=frames, poses=poses,
                        landmarks=LandmarkTrack(names=["a", "b"], points=pts),
                        background_image=rng.uniform(0, 1, (24, 32, 3)).astype(np.float32),
                        eye_closed=np.array([False, True, False]))
    save_sequence(tmp_path / "seq", seq)
    back = load_sequence(tmp_path / "seq")
    assert len(back) == 3
    for a, b in zip(back.poses, poses):
        assert a.rotation_distance_deg(b) < 1e-10
    assert back.landmarks.names == ["a", "b"]
    assert np.isnan(back.landmarks.points[1, 0]).all()
    assert np.allclose(back.landmarks.points[0], pts[0], atol=1e-12)
    assert back.eye_closed.tolist() == [False, True, False]
    assert back.background_image is not None
    # depth quantized to millimeters on disk
    assert np.abs(back.frames[0].depth - frames[0].depth).max() <= 0.5e-3 + 1e-9


def test_frame_validation():
    K = CameraIntrinsics(fx=100, fy=100, cx=16, cy=12, width=32, height=24)
    with pytest.raises(ValueError):
        RGBDFrame(color=np.zeros((24, 32, 3)), depth=np.zeros((10, 10)), intrinsics=K)
    bad = np.zeros((24, 32))
    bad[0, 0] = -1.0
    with pytest.raises(ValueError):
        RGBDFrame(color=np.zeros((24, 32, 3)), depth=bad, intrinsics=K)
