"""Pinhole camera model and depth-map geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Pixel (u, v) = (fx*x/z + cx, fy*y/z + cy), y down."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the same camera at a resized image (factor < 1 shrinks)."""
        return CameraIntrinsics(self.fx * factor, self.fy * factor,
                                self.cx * factor, self.cy * factor,
                                max(1, int(round(self.width * factor))),
                                max(1, int(round(self.height * factor))))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_dict(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]),
                                float(d["cy"]), int(d["width"]), int(d["height"]))


def project(point: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Project one camera-space point to pixel coordinates; z must be > 0."""
    point = np.asarray(point, dtype=np.float64)
    if point[2] <= 0:
        raise BehindCameraError(f"point has non-positive depth z={point[2]}")
    return np.array([K.fx * point[0] / point[2] + K.cx,
                     K.fy * point[1] / point[2] + K.cy])


def project_many(points: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) points.

    Returns (uv, valid); uv rows for invalid (z <= 0) points are zeros.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    valid = z > 1e-9
    uv = np.zeros((len(points), 2))
    zi = np.where(valid, z, 1.0)
    uv[:, 0] = K.fx * points[:, 0] / zi + K.cx
    uv[:, 1] = K.fy * points[:, 1] / zi + K.cy
    uv[~valid] = 0.0
    return uv, valid


def unproject(pixel: np.ndarray, z: float, K: CameraIntrinsics) -> np.ndarray:
    """Pixel + depth to camera-space point."""
    u, v = np.asarray(pixel, dtype=np.float64)
    return np.array([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])


def unproject_depth_map(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Per-pixel camera-space points of a depth map, (H, W, 3); invalid rows are 0."""
    H, W = depth.shape
    u = np.arange(W, dtype=np.float64)[None, :]
    v = np.arange(H, dtype=np.float64)[:, None]
    pts = np.empty((H, W, 3))
    pts[..., 0] = (u - K.cx) / K.fx * depth
    pts[..., 1] = (v - K.cy) / K.fy * depth
    pts[..., 2] = depth
    return pts


def compute_normals(depth: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Normal map from central differences of unprojected points.

    Returns (normals (H, W, 3), valid (H, W) bool). A pixel is valid only when
    itself and its four axis neighbors have nonzero depth. Normals are oriented
    to face the camera (n_z < 0 for a fronto-parallel surface).
    """
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    pts = unproject_depth_map(depth, K)
    normals = np.zeros((H, W, 3))
    valid = np.zeros((H, W), dtype=bool)
    if H < 3 or W < 3:
        return normals, valid

    d = depth > 0
    ok = d[1:-1, 1:-1] & d[1:-1, :-2] & d[1:-1, 2:] & d[:-2, 1:-1] & d[2:, 1:-1]
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    lens = np.linalg.norm(n, axis=2)
    ok = ok & (lens > 1e-12)
    n = np.divide(n, np.maximum(lens, 1e-12)[..., None])
    # orient toward the camera: n . p < 0 (p is the viewing ray direction)
    flip = np.einsum("ijk,ijk->ij", n, pts[1:-1, 1:-1]) > 0
    n[flip] *= -1.0
    normals[1:-1, 1:-1][ok] = n[ok]
    valid[1:-1, 1:-1] = ok
    return normals, valid
