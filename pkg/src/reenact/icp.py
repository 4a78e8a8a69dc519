"""Point-to-plane ICP with projective data association.

Used for frame-to-model rigid tracking of the calibration sweep and for
model-to-frame torso tracking. Gauss-Newton steps are guarded: a step is only
applied if the re-associated RMS residual does not increase, which makes the
per-iteration residual monotonically non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, compute_normals, unproject_depth_map
from .errors import DegenerateNormalMatrix, InsufficientCorrespondences, TrackingError
from .geometry import RigidTransform, TriMesh, rotation_from_axis_angle
from .sequence import RGBDFrame, SequenceStore


@dataclass
class ICPConfig:
    max_iterations: int = 30
    distance_reject: float = 0.05          # meters
    normal_angle_reject: float = 30.0      # degrees
    pyramid_levels: int = 3
    convergence_eps: float = 1e-8          # norm of the 6-dof update
    min_inliers: int = 6
    max_condition: float = 1e12
    max_point_count: int = 20000           # model points subsampled above this

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.distance_reject <= 0 or self.normal_angle_reject <= 0:
            raise ValueError("rejection thresholds must be positive")


@dataclass
class ICPResult:
    pose: RigidTransform
    rms_residual: float
    inlier_count: int
    converged: bool
    residual_history: list[float] = field(default_factory=list)


@dataclass
class _FramePyramid:
    intrinsics: list[CameraIntrinsics]
    points: list[np.ndarray]    # (H, W, 3) unprojected
    normals: list[np.ndarray]   # (H, W, 3)
    valid: list[np.ndarray]     # (H, W) bool


def build_frame_pyramid(frame: RGBDFrame, levels: int) -> _FramePyramid:
    """Decimated depth pyramid with per-level unprojections and normals."""
    Ks, pts, nrms, vals = [], [], [], []
    depth = np.asarray(frame.depth, dtype=np.float64)
    K = frame.intrinsics
    for lvl in range(levels):
        if lvl > 0:
            depth = depth[::2, ::2]
            K = CameraIntrinsics(K.fx * 0.5, K.fy * 0.5, K.cx * 0.5, K.cy * 0.5,
                                 depth.shape[1], depth.shape[0])
        n, v = compute_normals(depth, K)
        Ks.append(K)
        pts.append(unproject_depth_map(depth, K))
        nrms.append(n)
        vals.append(v)
    return _FramePyramid(Ks, pts, nrms, vals)


def point_to_plane_residuals(points: np.ndarray, target_points: np.ndarray,
                             target_normals: np.ndarray, w: np.ndarray,
                             dt: np.ndarray, base: RigidTransform) -> np.ndarray:
    """Residuals n . (exp([w]x) (R p + t) + dt - q) for fixed correspondences.

    This is the function the 6x6 normal equations linearize; the analytic
    Jacobian at (w, dt) = 0 is [(y x n), n] with y = R p + t.
    """
    y = base.apply(points)
    Rw = rotation_from_axis_angle(np.asarray(w, dtype=np.float64))
    moved = y @ Rw.T + np.asarray(dt, dtype=np.float64)
    return np.einsum("ij,ij->i", target_normals, moved - target_points)


def point_to_plane_jacobian(points: np.ndarray, target_normals: np.ndarray,
                            base: RigidTransform) -> np.ndarray:
    """(N, 6) analytic Jacobian of point_to_plane_residuals at (w, dt) = 0."""
    y = base.apply(points)
    return np.concatenate([np.cross(y, target_normals), target_normals], axis=1)


def _associate(points, normals, T, level, pyr: _FramePyramid, cfg: ICPConfig):
    """Projective association; returns (p, n_model_cam, q, n_frame) inlier arrays."""
    K = pyr.intrinsics[level]
    y = T.apply(points)
    nm = T.apply_normals(normals)
    z = y[:, 2]
    ok = z > 1e-6
    u = np.full(len(y), -1.0)
    v = np.full(len(y), -1.0)
    u[ok] = K.fx * y[ok, 0] / z[ok] + K.cx
    v[ok] = K.fy * y[ok, 1] / z[ok] + K.cy
    ui = np.round(u).astype(np.int64)
    vi = np.round(v).astype(np.int64)
    ok &= (ui >= 0) & (ui < K.width) & (vi >= 0) & (vi < K.height)
    ui = np.clip(ui, 0, K.width - 1)
    vi = np.clip(vi, 0, K.height - 1)
    ok &= pyr.valid[level][vi, ui]

    q = pyr.points[level][vi, ui]
    nf = pyr.normals[level][vi, ui]
    dist = np.linalg.norm(y - q, axis=1)
    ok &= dist < cfg.distance_reject
    cos_thr = np.cos(np.radians(cfg.normal_angle_reject))
    ok &= np.einsum("ij,ij->i", nm, nf) > cos_thr
    return y[ok], q[ok], nf[ok], ok


def _rms(y, q, nf) -> float:
    r = np.einsum("ij,ij->i", nf, y - q)
    return float(np.sqrt(np.mean(r * r))) if len(r) else np.inf


def icp_point_to_plane(model_points: np.ndarray, model_normals: np.ndarray,
                       frame: RGBDFrame, init: RigidTransform,
                       cfg: ICPConfig | None = None,
                       pyramid: _FramePyramid | None = None) -> ICPResult:
    """Estimate the rigid pose aligning model points onto the frame's depth.

    Minimizes sum of squared point-to-plane distances over projectively
    associated pairs; correspondences outside the distance or normal-angle
    gates are rejected. Raises InsufficientCorrespondences / DegenerateNormalMatrix.
    """
    cfg = cfg or ICPConfig()
    points = np.asarray(model_points, dtype=np.float64)
    normals = np.asarray(model_normals, dtype=np.float64)
    if len(points) > cfg.max_point_count:
        step = int(np.ceil(len(points) / cfg.max_point_count))
        points = points[::step]
        normals = normals[::step]
    pyr = pyramid or build_frame_pyramid(frame, cfg.pyramid_levels)

    T = init
    history: list[float] = []
    converged = False
    last_inliers = 0
    for level in range(cfg.pyramid_levels - 1, -1, -1):
        for _ in range(cfg.max_iterations):
            y, q, nf, _ = _associate(points, normals, T, level, pyr, cfg)
            last_inliers = len(y)
            if last_inliers < cfg.min_inliers:
                raise InsufficientCorrespondences(
                    f"{last_inliers} correspondences at pyramid level {level}")
            r = np.einsum("ij,ij->i", nf, y - q)
            rms = float(np.sqrt(np.mean(r * r)))
            if level == 0:
                history.append(rms)

            J = np.concatenate([np.cross(y, nf), nf], axis=1)
            A = J.T @ J
            b = -J.T @ r
            if np.linalg.cond(A) > cfg.max_condition:
                raise DegenerateNormalMatrix(
                    f"normal-equation condition {np.linalg.cond(A):.3e}")
            x = np.linalg.solve(A, b)

            # guarded acceptance: damp until the re-associated rms does not increase
            accepted = False
            scale = 1.0
            for _ in range(8):
                dT = RigidTransform(rotation_from_axis_angle(x[:3] * scale), x[3:] * scale)
                T_new = dT.compose(T)
                y2, q2, nf2, _ = _associate(points, normals, T_new, level, pyr, cfg)
                if len(y2) >= cfg.min_inliers and _rms(y2, q2, nf2) <= rms + 1e-15:
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                converged = True
                break
            T = T_new
            if np.linalg.norm(x) * scale < cfg.convergence_eps:
                converged = True
                break
        else:
            converged = False

    y, q, nf, _ = _associate(points, normals, T, 0, pyr, cfg)
    rms = _rms(y, q, nf)
    if level == 0:
        history.append(rms)
    return ICPResult(pose=T, rms_residual=rms, inlier_count=len(y),
                     converged=converged, residual_history=history)


def icp_mesh_to_frame(model: TriMesh, frame: RGBDFrame, init: RigidTransform,
                      cfg: ICPConfig | None = None) -> ICPResult:
    return icp_point_to_plane(model.vertices, model.ensure_normals(), frame, init, cfg)


def track_sequence(model: TriMesh, seq: SequenceStore,
                   cfg: ICPConfig | None = None,
                   initial: RigidTransform | None = None) -> list[RigidTransform]:
    """Track every frame against the canonical model, warm-starting from the
    previous frame's pose. Poses map canonical model space into each frame.
    """
    cfg = cfg or ICPConfig()
    points = model.vertices
    normals = model.ensure_normals()
    poses: list[RigidTransform] = []
    T = initial or RigidTransform.identity()
    for i, frame in enumerate(seq.frames):
        try:
            result = icp_point_to_plane(points, normals, frame, T, cfg)
        except (InsufficientCorrespondences, DegenerateNormalMatrix) as e:
            raise TrackingError(f"ICP failed at frame {i}: {e}", frame_index=i) from e
        T = result.pose
        poses.append(T)
    return poses
