"""Software z-buffer rasterizer for triangle meshes.

The core produces a depth buffer plus per-pixel face index and barycentric
coordinates; color rendering and attribute images are derived from those.
Perspective-correct interpolation is used throughout. Fully vectorized: all
candidate (pixel, face) pairs are generated at once and resolved with a
lexicographic sort, which also makes z-ties deterministic (lowest face wins).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics
from .geometry import RigidTransform, TriMesh
from .shading import shade

_Z_NEAR = 0.05


@dataclass
class RasterBuffers:
    """Per-pixel rasterization output in camera space."""

    depth: np.ndarray      # (H, W) float64 camera z, 0 where empty
    face_id: np.ndarray    # (H, W) int32, -1 where empty
    bary: np.ndarray       # (H, W, 3) perspective-correct barycentrics

    @property
    def coverage(self) -> np.ndarray:
        return self.face_id >= 0

    def interpolate(self, vertex_values: np.ndarray, faces: np.ndarray) -> np.ndarray:
        """Interpolate per-vertex values over covered pixels; zeros elsewhere.

        vertex_values: (V,) or (V, K). Returns (H, W) or (H, W, K).
        """
        vals = np.asarray(vertex_values, dtype=np.float64)
        squeeze = vals.ndim == 1
        if squeeze:
            vals = vals[:, None]
        H, W = self.face_id.shape
        out = np.zeros((H, W, vals.shape[1]))
        mask = self.coverage
        f = faces[self.face_id[mask]]
        b = self.bary[mask]
        out[mask] = (vals[f[:, 0]] * b[:, 0:1] + vals[f[:, 1]] * b[:, 1:2]
                     + vals[f[:, 2]] * b[:, 2:3])
        return out[..., 0] if squeeze else out


def rasterize(vertices: np.ndarray, faces: np.ndarray, K: CameraIntrinsics) -> RasterBuffers:
    """Rasterize camera-space triangles into depth/face/barycentric buffers."""
    H, W = K.height, K.width
    depth = np.zeros((H, W))
    face_id = np.full((H, W), -1, dtype=np.int32)
    bary = np.zeros((H, W, 3))
    buffers = RasterBuffers(depth, face_id, bary)

    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    if len(f) == 0 or len(v) == 0:
        return buffers

    tri = v[f]                                   # (F, 3, 3)
    z = tri[..., 2]
    ok = (z > _Z_NEAR).all(axis=1)
    if not ok.any():
        return buffers
    tri = tri[ok]
    keep_ids = np.nonzero(ok)[0]

    inv_z = 1.0 / tri[..., 2]
    u = K.fx * tri[..., 0] * inv_z + K.cx        # (F, 3)
    vv = K.fy * tri[..., 1] * inv_z + K.cy

    u0 = np.maximum(np.ceil(u.min(axis=1)).astype(np.int64), 0)
    u1 = np.minimum(np.floor(u.max(axis=1)).astype(np.int64), W - 1)
    v0 = np.maximum(np.ceil(vv.min(axis=1)).astype(np.int64), 0)
    v1 = np.minimum(np.floor(vv.max(axis=1)).astype(np.int64), H - 1)
    bw = u1 - u0 + 1
    bh = v1 - v0 + 1
    area = np.maximum(bw, 0) * np.maximum(bh, 0)

    keep = area > 0
    if not keep.any():
        return buffers
    tri, u, vv, inv_z = tri[keep], u[keep], vv[keep], inv_z[keep]
    u0, v0, bw, bh, area = u0[keep], v0[keep], bw[keep], bh[keep], area[keep]
    keep_ids = keep_ids[keep]

    # flat candidate list: each face contributes its bbox pixels
    counts = area
    total = int(counts.sum())
    face_rep = np.repeat(np.arange(len(counts)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - starts[face_rep]
    px = u0[face_rep] + local % bw[face_rep]
    py = v0[face_rep] + local // bw[face_rep]

    # screen-space edge functions (signed areas)
    ax, ay = u[face_rep, 0], vv[face_rep, 0]
    bx, by = u[face_rep, 1], vv[face_rep, 1]
    cx_, cy_ = u[face_rep, 2], vv[face_rep, 2]
    pxf = px.astype(np.float64)
    pyf = py.astype(np.float64)
    w0 = (bx - pxf) * (cy_ - pyf) - (cx_ - pxf) * (by - pyf)
    w1 = (cx_ - pxf) * (ay - pyf) - (ax - pxf) * (cy_ - pyf)
    w2 = (ax - pxf) * (by - pyf) - (bx - pxf) * (ay - pyf)
    den = w0 + w1 + w2
    nz = np.abs(den) > 1e-12
    same_side = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
    inside = nz & same_side
    if not inside.any():
        return buffers

    face_rep = face_rep[inside]
    px, py = px[inside], py[inside]
    l0 = w0[inside] / den[inside]
    l1 = w1[inside] / den[inside]
    l2 = w2[inside] / den[inside]

    # perspective-correct interpolation: weight screen barycentrics by 1/z
    iz = inv_z[face_rep]
    pz = l0 * iz[:, 0] + l1 * iz[:, 1] + l2 * iz[:, 2]
    zcand = 1.0 / pz
    b0 = l0 * iz[:, 0] * zcand
    b1 = l1 * iz[:, 1] * zcand
    b2 = l2 * iz[:, 2] * zcand

    pix = py * W + px
    order = np.lexsort((face_rep, zcand, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    sel = order[first]

    ys, xs = pix[sel] // W, pix[sel] % W
    depth[ys, xs] = zcand[sel]
    face_id[ys, xs] = keep_ids[face_rep[sel]].astype(np.int32)
    bary[ys, xs, 0] = b0[sel]
    bary[ys, xs, 1] = b1[sel]
    bary[ys, xs, 2] = b2[sel]
    return buffers


@dataclass
class RGBDFrameData:
    """Raw rendered buffers before packaging into an RGBDFrame."""

    color: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray


def render_synthetic(mesh: TriMesh, pose: RigidTransform, K: CameraIntrinsics,
                     light: np.ndarray, albedo: np.ndarray,
                     background: np.ndarray | None = None) -> RGBDFrameData:
    """Z-buffered SH-shaded render of a posed mesh.

    light: (9, 3) SH coefficients; albedo: (V, 3) per-vertex in [0, 1].
    Depth holds camera-space z (0 where empty); color is albedo * SH irradiance
    clamped to [0, 1], composited over `background` if given.
    """
    cam_vertices = pose.apply(mesh.vertices)
    cam_normals = pose.apply_normals(mesh.ensure_normals())
    buffers = rasterize(cam_vertices, mesh.faces, K)

    H, W = K.height, K.width
    color = np.zeros((H, W, 3)) if background is None else np.asarray(background, dtype=np.float64).copy()
    mask = buffers.coverage
    if mask.any():
        n = buffers.interpolate(cam_normals, mesh.faces)[mask]
        lens = np.linalg.norm(n, axis=1)
        n /= np.maximum(lens, 1e-12)[:, None]
        a = buffers.interpolate(albedo, mesh.faces)[mask]
        color[mask] = shade(a, n, light)
    return RGBDFrameData(color=color.astype(np.float32),
                         depth=buffers.depth.astype(np.float32),
                         coverage=mask)


def render_attribute_image(mesh: TriMesh, pose: RigidTransform, K: CameraIntrinsics,
                           vertex_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a per-vertex channel; returns (image, coverage)."""
    buffers = rasterize(pose.apply(mesh.vertices), mesh.faces, K)
    return buffers.interpolate(vertex_values, mesh.faces), buffers.coverage
