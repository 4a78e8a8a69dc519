"""Procedural mesh primitives: UV sphere, superellipsoid, cylinder, grid plane."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh, compute_vertex_normals


def _grid_faces(rows: int, cols: int, wrap: bool) -> np.ndarray:
    """Triangulate a rows x cols vertex grid; columns wrap around if requested."""
    faces = []
    ncols = cols if wrap else cols - 1
    for r in range(rows - 1):
        for c in range(ncols):
            c1 = (c + 1) % cols
            i00 = r * cols + c
            i01 = r * cols + c1
            i10 = (r + 1) * cols + c
            i11 = (r + 1) * cols + c1
            faces.append([i00, i01, i10])
            faces.append([i01, i11, i10])
    return np.asarray(faces, dtype=np.int32)


def uv_sphere(radii, center, rings: int = 24, segments: int = 32) -> TriMesh:
    """Closed ellipsoid mesh from a latitude/longitude grid plus two poles.

    The unit-sphere direction of each vertex is stored as attribute 'dir'.
    """
    radii = np.asarray(radii, dtype=np.float64) * np.ones(3)
    center = np.asarray(center, dtype=np.float64)
    theta = np.linspace(0, np.pi, rings + 2)[1:-1]      # exclude poles
    phi = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([np.sin(T) * np.cos(P), np.cos(T), np.sin(T) * np.sin(P)],
                    axis=-1).reshape(-1, 3)
    north = np.array([[0.0, 1.0, 0.0]])
    south = np.array([[0.0, -1.0, 0.0]])
    dirs = np.concatenate([dirs, north, south], axis=0)

    faces = _grid_faces(rings, segments, wrap=True).tolist()
    n_i = rings * segments
    s_i = n_i + 1
    for c in range(segments):
        c1 = (c + 1) % segments
        faces.append([n_i, c1, c])                       # north cap
        last = (rings - 1) * segments
        faces.append([s_i, last + c, last + c1])         # south cap

    verts = center + dirs * radii
    mesh = TriMesh(verts, np.asarray(faces, dtype=np.int32))
    mesh.normals = compute_vertex_normals(mesh.vertices, mesh.faces)
    mesh.attributes["dir"] = dirs
    return mesh


def superellipsoid(radii, center, exponent: float = 2.5,
                   rings: int = 20, segments: int = 28) -> TriMesh:
    """Superellipsoid |x/a|^p + |y/b|^p + |z/c|^p = 1 as a closed mesh."""
    sphere = uv_sphere(1.0, (0, 0, 0), rings=rings, segments=segments)
    dirs = sphere.attributes["dir"]
    # radial scale so the point lies on the superellipsoid surface
    p = exponent
    denom = np.power(np.abs(dirs), p).sum(axis=1)
    scale = np.power(np.maximum(denom, 1e-12), -1.0 / p)
    verts = np.asarray(center, dtype=np.float64) + dirs * scale[:, None] * np.asarray(radii, dtype=np.float64)
    mesh = TriMesh(verts, sphere.faces, compute_vertex_normals(verts, sphere.faces))
    mesh.attributes["dir"] = dirs
    return mesh


def open_cylinder(radius: float, center_top, center_bottom,
                  rings: int = 6, segments: int = 20) -> TriMesh:
    """Open tube along the segment from center_top to center_bottom (y-ish axis)."""
    top = np.asarray(center_top, dtype=np.float64)
    bot = np.asarray(center_bottom, dtype=np.float64)
    axis = bot - top
    phi = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring_dir = np.stack([np.cos(phi), np.zeros_like(phi), np.sin(phi)], axis=1)
    rows = []
    for s in np.linspace(0.0, 1.0, rings):
        rows.append(top + s * axis + ring_dir * radius)
    verts = np.concatenate(rows, axis=0)
    faces = _grid_faces(rings, segments, wrap=True)
    return TriMesh(verts, faces, compute_vertex_normals(verts, faces))


def plane_grid(size_x: float, size_y: float, z: float, rows: int = 10,
               cols: int = 10, center=(0.0, 0.0)) -> TriMesh:
    """Fronto-parallel rectangle at depth z, centered on (center_x, center_y)."""
    xs = np.linspace(-size_x / 2, size_x / 2, cols) + center[0]
    ys = np.linspace(-size_y / 2, size_y / 2, rows) + center[1]
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel(), np.full(rows * cols, float(z))], axis=1)
    faces = _grid_faces(rows, cols, wrap=False)
    return TriMesh(verts, faces, compute_vertex_normals(verts, faces))
