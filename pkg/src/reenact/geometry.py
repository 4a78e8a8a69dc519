"""Rigid transforms and triangle meshes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix [v]_x such that skew(v) @ w == cross(v, w)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_from_axis_angle(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map; w is an axis-angle 3-vector in radians."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        K = skew(w)
        return np.eye(3) + K + 0.5 * (K @ K)
    K = skew(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def axis_angle_from_rotation(R: np.ndarray) -> np.ndarray:
    """Logarithm map; returns axis-angle vector with angle in [0, pi]."""
    cos_t = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta < 1e-9:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if np.pi - theta < 1e-6:
        # near pi: extract axis from the symmetric part
        A = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs using off-diagonals
        if axis[0] > 1e-6:
            axis[1] = np.sign(A[0, 1]) * abs(axis[1])
            axis[2] = np.sign(A[0, 2]) * abs(axis[2])
        elif axis[1] > 1e-6:
            axis[2] = np.sign(A[1, 2]) * abs(axis[2])
        axis /= max(np.linalg.norm(axis), 1e-12)
        return axis * theta
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return v * (theta / (2.0 * np.sin(theta)))


def rotation_angle_deg(R: np.ndarray) -> float:
    """Geodesic rotation angle of R in degrees."""
    cos_t = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_t)))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def euler_xyz_to_rotation(angles: np.ndarray) -> np.ndarray:
    """Intrinsic XYZ Euler angles (radians) to rotation: R = Rx @ Ry @ Rz."""
    ax, ay, az = angles
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=np.float64)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=np.float64)
    return Rx @ Ry @ Rz


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform: x' = rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(R) < 0.0:
            raise ValueError(f"rotation is not proper orthonormal (err={err:.2e})")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(M: np.ndarray) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        return RigidTransform(M[:3, :3], M[:3, 3])

    @staticmethod
    def from_axis_angle(w, t) -> "RigidTransform":
        return RigidTransform(rotation_from_axis_angle(np.asarray(w, dtype=np.float64)),
                              np.asarray(t, dtype=np.float64))

    @staticmethod
    def rotation_about_point(R: np.ndarray, pivot: np.ndarray) -> "RigidTransform":
        """Rotation by R about a fixed pivot point."""
        pivot = np.asarray(pivot, dtype=np.float64)
        return RigidTransform(R, pivot - R @ pivot)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one 3-vector or an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_normals(self, normals: np.ndarray) -> np.ndarray:
        return np.asarray(normals, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply `other` first, then `self`."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def rotation_distance_deg(self, other: "RigidTransform") -> float:
        return rotation_angle_deg(self.rotation.T @ other.rotation)

    def translation_distance(self, other: "RigidTransform") -> float:
        return float(np.linalg.norm(self.translation - other.translation))


@dataclass
class TriMesh:
    """Indexed triangle mesh with per-vertex normals and optional attributes.

    vertices: (V, 3) float64 meters; faces: (F, 3) int32; normals: (V, 3) unit
    vectors; attributes: named per-vertex channels, each (V,) or (V, K).
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.vertices):
                raise ValueError("normal count does not match vertex count")
        for name, ch in self.attributes.items():
            if len(ch) != len(self.vertices):
                raise ValueError(f"attribute '{name}' length does not match vertex count")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray, recompute_normals: bool = True) -> "TriMesh":
        """Same topology/attributes with replaced vertex positions."""
        normals = compute_vertex_normals(vertices, self.faces) if recompute_normals else self.normals
        return TriMesh(vertices, self.faces.copy(), normals,
                       {k: v.copy() for k, v in self.attributes.items()})

    def transformed(self, T: RigidTransform) -> "TriMesh":
        normals = T.apply_normals(self.normals) if self.normals is not None else None
        return TriMesh(T.apply(self.vertices), self.faces.copy(), normals,
                       {k: v.copy() for k, v in self.attributes.items()})

    def face_normals(self) -> np.ndarray:
        """(F, 3) unit face normals; degenerate faces get zero vectors."""
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        lens = np.linalg.norm(n, axis=1)
        ok = lens > 1e-20
        n[ok] /= lens[ok, None]
        n[~ok] = 0.0
        return n

    def ensure_normals(self) -> np.ndarray:
        if self.normals is None:
            self.normals = compute_vertex_normals(self.vertices, self.faces)
        return self.normals

    def vertex_adjacency(self) -> list[np.ndarray]:
        """Sorted 1-ring neighbor index arrays, one per vertex."""
        return build_vertex_adjacency(self.faces, self.num_vertices)

    def edge_face_counts(self) -> dict[tuple[int, int], int]:
        """Map from undirected edge to the number of incident faces."""
        counts: dict[tuple[int, int], int] = {}
        for tri in self.faces:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(min(a, b)), int(max(a, b)))
                counts[key] = counts.get(key, 0) + 1
        return counts


def compute_vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted per-vertex normals, normalized to unit length."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    fn = np.cross(vertices[faces[:, 1]] - vertices[faces[:, 0]],
                  vertices[faces[:, 2]] - vertices[faces[:, 0]])
    normals = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(normals, faces[:, k], fn)
    lens = np.linalg.norm(normals, axis=1)
    ok = lens > 1e-20
    normals[ok] /= lens[ok, None]
    normals[~ok] = np.array([0.0, 0.0, -1.0])
    return normals


def build_vertex_adjacency(faces: np.ndarray, num_vertices: int) -> list[np.ndarray]:
    """Sorted unique 1-ring neighbors per vertex."""
    neigh: list[set[int]] = [set() for _ in range(num_vertices)]
    for a, b, c in np.asarray(faces, dtype=np.int64):
        neigh[a].update((b, c))
        neigh[b].update((a, c))
        neigh[c].update((a, b))
    return [np.array(sorted(s), dtype=np.int64) for s in neigh]


def rigid_align(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping source points onto target (Kabsch)."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    cs = source.mean(axis=0)
    ct = target.mean(axis=0)
    H = (source - cs).T @ (target - ct)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ D @ U.T
    return RigidTransform(R, ct - R @ cs)
