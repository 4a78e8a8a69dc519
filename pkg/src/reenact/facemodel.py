"""Linear parametric face model, its fitting energies, and scan fitting.

The model is additive: v_i(alpha, delta) = mean_i + sum_k alpha_k S_ki
+ sum_k delta_k E_ki. Fitting minimizes a weighted sum of a sparse landmark
term, a dense closest-point term with distance/normal pruning, and a
statistical regularizer, via Levenberg-Marquardt with re-linearized rotation
increments and per-outer-iteration correspondence updates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import imgio, plyio
from .errors import NoCorrespondencesError
from .geometry import (RigidTransform, TriMesh, compute_vertex_normals,
                       rigid_align, rotation_from_axis_angle, skew)

DENSE_DISTANCE_THRESHOLD = 0.10   # meters; correspondences beyond are pruned
TRANSFER_DISTANCE_THRESHOLD = 0.005  # meters; used by blendshape transfer


@dataclass
class ParametricFaceModel:
    """Mean + shape basis + expression basis + albedo + per-mode stddevs."""

    mean_shape: np.ndarray        # (V, 3)
    faces: np.ndarray             # (F, 3)
    shape_basis: np.ndarray       # (Na, V, 3)
    expression_basis: np.ndarray  # (Nd, V, 3)
    sigma_shape: np.ndarray       # (Na,)
    sigma_exp: np.ndarray         # (Nd,)
    mean_albedo: np.ndarray       # (V, 3)
    landmark_vertex_ids: dict[str, int]
    region_masks: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if (self.sigma_shape <= 0).any() or (self.sigma_exp <= 0).any():
            raise ValueError("all sigmas must be positive")

    @property
    def num_vertices(self) -> int:
        return len(self.mean_shape)

    @property
    def num_shape(self) -> int:
        return len(self.shape_basis)

    @property
    def num_expression(self) -> int:
        return len(self.expression_basis)

    def mesh(self, alpha=None, delta=None) -> TriMesh:
        v = evaluate_vertices(self, alpha, delta)
        return TriMesh(v, self.faces, compute_vertex_normals(v, self.faces))


@dataclass
class FaceParams:
    """Per-frame or per-fit model parameters."""

    alpha: np.ndarray
    delta: np.ndarray
    pose: RigidTransform
    illumination: np.ndarray | None = None   # (9, 3) SH coefficients
    albedo_offset: np.ndarray | None = None  # (3,) global RGB offset

    def copy(self) -> "FaceParams":
        return FaceParams(self.alpha.copy(), self.delta.copy(), self.pose,
                          None if self.illumination is None else self.illumination.copy(),
                          None if self.albedo_offset is None else self.albedo_offset.copy())

    def to_dict(self) -> dict:
        d = {"alpha": self.alpha.tolist(), "delta": self.delta.tolist(),
             "pose": self.pose.matrix().reshape(-1).tolist()}
        if self.illumination is not None:
            d["illumination"] = self.illumination.reshape(-1).tolist()
        if self.albedo_offset is not None:
            d["albedo_offset"] = self.albedo_offset.tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "FaceParams":
        illum = None
        if "illumination" in d:
            illum = np.asarray(d["illumination"], dtype=np.float64).reshape(9, 3)
        off = None
        if "albedo_offset" in d:
            off = np.asarray(d["albedo_offset"], dtype=np.float64)
        return FaceParams(np.asarray(d["alpha"], dtype=np.float64),
                          np.asarray(d["delta"], dtype=np.float64),
                          RigidTransform.from_matrix(
                              np.asarray(d["pose"]).reshape(4, 4)),
                          illum, off)


def evaluate_vertices(model: ParametricFaceModel, alpha=None, delta=None) -> np.ndarray:
    """v_i = mean_i + sum_k alpha_k S_ki + sum_k delta_k E_ki."""
    v = model.mean_shape.copy()
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=np.float64)
        if len(alpha) != model.num_shape:
            raise ValueError(f"alpha length {len(alpha)} != {model.num_shape}")
        if model.num_shape:
            v += np.einsum("k,kvi->vi", alpha, model.shape_basis)
    if delta is not None:
        delta = np.asarray(delta, dtype=np.float64)
        if len(delta) != model.num_expression:
            raise ValueError(f"delta length {len(delta)} != {model.num_expression}")
        if model.num_expression:
            v += np.einsum("k,kvi->vi", delta, model.expression_basis)
    return v


# ---------------------------------------------------------------------------
# fitting energies
#
# All gradients are with respect to (alpha, delta, omega, t) where omega is a
# left rotation increment: R(omega) = exp([omega]x) @ R_bar. Residual blocks
# also expose their Jacobians for the LM solver.

def _alignment_residuals(model: ParametricFaceModel, params: FaceParams,
                         vertex_ids: np.ndarray, targets: np.ndarray):
    """Residuals (R v_i + t - p) stacked, plus Jacobian wrt (alpha, delta, omega, t)."""
    R = params.pose.rotation
    t = params.pose.translation
    v = evaluate_vertices(model, params.alpha, params.delta)[vertex_ids]
    y = v @ R.T + t
    r = (y - targets).reshape(-1)

    n = len(vertex_ids)
    na, nd = model.num_shape, model.num_expression
    J = np.zeros((3 * n, na + nd + 6))
    if na:
        # d/dalpha_k = R S_k[i]
        Sk = model.shape_basis[:, vertex_ids, :]              # (Na, n, 3)
        J[:, :na] = np.einsum("knj,ij->nik", Sk, R).reshape(3 * n, na)
    if nd:
        Ek = model.expression_basis[:, vertex_ids, :]
        J[:, na:na + nd] = np.einsum("knj,ij->nik", Ek, R).reshape(3 * n, nd)
    # d/domega = -[y]x ; d/dt = I
    J[0::3, na + nd + 1] = y[:, 2]
    J[0::3, na + nd + 2] = -y[:, 1]
    J[1::3, na + nd + 0] = -y[:, 2]
    J[1::3, na + nd + 2] = y[:, 0]
    J[2::3, na + nd + 0] = y[:, 1]
    J[2::3, na + nd + 1] = -y[:, 0]
    J[0::3, na + nd + 3] = 1.0
    J[1::3, na + nd + 4] = 1.0
    J[2::3, na + nd + 5] = 1.0
    return r, J


def _grad_dict(model: ParametricFaceModel, r: np.ndarray, J: np.ndarray) -> dict:
    g = 2.0 * (J.T @ r)
    na, nd = model.num_shape, model.num_expression
    return {"alpha": g[:na], "delta": g[na:na + nd],
            "omega": g[na + nd:na + nd + 3], "t": g[na + nd + 3:]}


def energy_sparse(model: ParametricFaceModel, params: FaceParams,
                  correspondences: list[tuple[int, np.ndarray]]):
    """Sparse feature alignment: sum ||R v_i + t - p_j||^2 with analytic gradient."""
    if not correspondences:
        zeros = {"alpha": np.zeros(model.num_shape), "delta": np.zeros(model.num_expression),
                 "omega": np.zeros(3), "t": np.zeros(3)}
        return 0.0, zeros
    ids = np.asarray([c[0] for c in correspondences], dtype=np.int64)
    targets = np.asarray([c[1] for c in correspondences], dtype=np.float64)
    r, J = _alignment_residuals(model, params, ids, targets)
    return float(r @ r), _grad_dict(model, r, J)


def dense_correspondences(model: ParametricFaceModel, params: FaceParams,
                          target: TriMesh, thres_dist: float = DENSE_DISTANCE_THRESHOLD,
                          normal_thres_deg: float = 60.0,
                          tree: cKDTree | None = None):
    """Closest-point pairs (model_vid, target_vid) pruned by distance and normals."""
    v = evaluate_vertices(model, params.alpha, params.delta)
    posed = params.pose.apply(v)
    posed_normals = params.pose.apply_normals(compute_vertex_normals(v, model.faces))
    tree = tree or cKDTree(target.vertices)
    dist, idx = tree.query(posed)
    keep = dist <= thres_dist
    tn = target.ensure_normals()
    cos_thr = np.cos(np.radians(normal_thres_deg))
    keep &= np.einsum("ij,ij->i", posed_normals, tn[idx]) > cos_thr
    src = np.nonzero(keep)[0]
    return np.stack([src, idx[keep]], axis=1)


def energy_dense(model: ParametricFaceModel, params: FaceParams, target: TriMesh,
                 thres_dist: float = DENSE_DISTANCE_THRESHOLD,
                 normal_thres_deg: float = 60.0):
    """Dense point-to-point energy over pruned closest-point pairs.

    Returns (energy, gradient, active_set) where active_set rows are
    (model_vertex, target_vertex) index pairs.
    """
    active = dense_correspondences(model, params, target, thres_dist, normal_thres_deg)
    if len(active) == 0:
        raise NoCorrespondencesError("dense active set empty after pruning")
    r, J = _alignment_residuals(model, params, active[:, 0],
                                target.vertices[active[:, 1]])
    return float(r @ r), _grad_dict(model, r, J), active


def energy_regularizer(model: ParametricFaceModel, alpha: np.ndarray, delta: np.ndarray):
    """Statistical prior: sum (alpha_i/sigma_i)^2 + sum (delta_i/sigma_i)^2."""
    ra = np.asarray(alpha) / model.sigma_shape
    rd = np.asarray(delta) / model.sigma_exp
    energy = float(ra @ ra + rd @ rd)
    grad = {"alpha": 2.0 * ra / model.sigma_shape, "delta": 2.0 * rd / model.sigma_exp,
            "omega": np.zeros(3), "t": np.zeros(3)}
    return energy, grad


@dataclass
class FitWeights:
    sparse: float = 1.0
    dense: float = 1.0
    regularizer: float = 0.01


@dataclass
class FaceFitResult:
    params: FaceParams
    energies: dict[str, float]
    converged: bool
    active_set: np.ndarray           # final dense correspondences
    accepted_energies: list[float]
    iterations: int


def _regularizer_residuals(model, alpha, delta):
    r = np.concatenate([alpha / model.sigma_shape, delta / model.sigma_exp])
    na, nd = model.num_shape, model.num_expression
    J = np.zeros((na + nd, na + nd + 6))
    J[:na, :na] = np.diag(1.0 / model.sigma_shape)
    J[na:, na:na + nd] = np.diag(1.0 / model.sigma_exp)
    return r, J


def fit_to_scan(model: ParametricFaceModel, scan: TriMesh,
                landmarks_3d: list[tuple[int, np.ndarray]],
                weights: FitWeights | None = None,
                max_outer: int = 30, step_eps: float = 1e-7,
                thres_dist: float = DENSE_DISTANCE_THRESHOLD,
                normal_thres_deg: float = 60.0,
                init_params: FaceParams | None = None) -> FaceFitResult:
    """LM fit of w_s E_sparse + w_d E_dense + w_r E_regularizer to a scan.

    Pose is initialized by rigid alignment of >= 4 landmark pairs; dense
    correspondences are recomputed every outer iteration.
    """
    weights = weights or FitWeights()
    if init_params is None:
        if len(landmarks_3d) < 4:
            raise ValueError("need at least 4 landmark pairs for initialization")
        ids = np.asarray([c[0] for c in landmarks_3d], dtype=np.int64)
        targets = np.asarray([c[1] for c in landmarks_3d], dtype=np.float64)
        if np.linalg.matrix_rank(targets - targets.mean(axis=0), tol=1e-9) < 2:
            raise ValueError("landmark targets are degenerate")
        pose0 = rigid_align(model.mean_shape[ids], targets)
        params = FaceParams(np.zeros(model.num_shape), np.zeros(model.num_expression), pose0)
    else:
        params = init_params.copy()
        ids = np.asarray([c[0] for c in landmarks_3d], dtype=np.int64)
        targets = np.asarray([c[1] for c in landmarks_3d], dtype=np.float64)

    tree = cKDTree(scan.vertices)
    scan.ensure_normals()
    sw, dw, rw = np.sqrt(weights.sparse), np.sqrt(weights.dense), np.sqrt(weights.regularizer)

    lam = 1e-3
    accepted: list[float] = []
    converged = False
    active = np.zeros((0, 2), dtype=np.int64)
    it = 0
    for it in range(1, max_outer + 1):
        active = dense_correspondences(model, params, scan, thres_dist,
                                       normal_thres_deg, tree)
        if len(active) == 0 and len(landmarks_3d) == 0:
            raise NoCorrespondencesError("no sparse or dense correspondences")

        def residuals(p: FaceParams):
            blocks_r, blocks_J = [], []
            if len(landmarks_3d):
                r, J = _alignment_residuals(model, p, ids, targets)
                blocks_r.append(sw * r)
                blocks_J.append(sw * J)
            if len(active):
                r, J = _alignment_residuals(model, p, active[:, 0],
                                            scan.vertices[active[:, 1]])
                blocks_r.append(dw * r)
                blocks_J.append(dw * J)
            r, J = _regularizer_residuals(model, p.alpha, p.delta)
            blocks_r.append(rw * r)
            blocks_J.append(rw * J)
            return np.concatenate(blocks_r), np.concatenate(blocks_J)

        r, J = residuals(params)
        energy = float(r @ r)
        if not accepted:
            accepted.append(energy)

        JtJ = J.T @ J
        g = J.T @ r
        D = np.diag(np.maximum(np.diag(JtJ), 1e-12))
        stepped = False
        dx = None
        while lam <= 1e10:
            try:
                dx = np.linalg.solve(JtJ + lam * D, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = _apply_step(model, params, dx)
            r_new, _ = residuals(cand)
            e_new = float(r_new @ r_new)
            if e_new < energy:
                params = cand
                accepted.append(e_new)
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                break
            lam *= 10.0
        if not stepped:
            converged = True
            break
        if np.linalg.norm(dx) < step_eps:
            converged = True
            break

    energies = _final_energies(model, params, landmarks_3d, scan, weights,
                               thres_dist, normal_thres_deg)
    return FaceFitResult(params=params, energies=energies, converged=converged,
                         active_set=active, accepted_energies=accepted, iterations=it)


def _apply_step(model: ParametricFaceModel, params: FaceParams, dx: np.ndarray) -> FaceParams:
    na, nd = model.num_shape, model.num_expression
    alpha = params.alpha + dx[:na]
    delta = params.delta + dx[na:na + nd]
    omega = dx[na + nd:na + nd + 3]
    dt = dx[na + nd + 3:na + nd + 6]
    R = rotation_from_axis_angle(omega) @ params.pose.rotation
    pose = RigidTransform(R, params.pose.translation + dt)
    return FaceParams(alpha, delta, pose, params.illumination, params.albedo_offset)


def _final_energies(model, params, landmarks_3d, scan, weights, thres_dist,
                    normal_thres_deg) -> dict[str, float]:
    e_sparse, _ = energy_sparse(model, params, landmarks_3d)
    try:
        e_dense, _, _ = energy_dense(model, params, scan, thres_dist, normal_thres_deg)
    except NoCorrespondencesError:
        e_dense = 0.0
    e_reg, _ = energy_regularizer(model, params.alpha, params.delta)
    return {"sparse": e_sparse, "dense": e_dense, "regularizer": e_reg,
            "total": weights.sparse * e_sparse + weights.dense * e_dense
                     + weights.regularizer * e_reg}


# ---------------------------------------------------------------------------
# model bundle I/O

def save_model_bundle(directory, model: ParametricFaceModel) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mean = TriMesh(model.mean_shape, model.faces,
                   compute_vertex_normals(model.mean_shape, model.faces),
                   {"albedo": model.mean_albedo})
    plyio.save_ply(directory / "mean.ply", mean)
    masks = TriMesh(model.mean_shape, model.faces, None,
                    {k: v for k, v in sorted(model.region_masks.items())})
    plyio.save_ply(directory / "masks.ply", masks)
    if model.num_shape:
        imgio.save_pfm(directory / "shape_basis.pfm",
                       model.shape_basis.reshape(model.num_shape,
                                                 model.num_vertices, 3))
    if model.num_expression:
        imgio.save_pfm(directory / "expr_basis.pfm",
                       model.expression_basis.reshape(model.num_expression,
                                                      model.num_vertices, 3))
    with open(directory / "sigmas.json", "w") as f:
        json.dump({"sigma_shape": model.sigma_shape.tolist(),
                   "sigma_exp": model.sigma_exp.tolist()}, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(directory / "landmarks.json", "w") as f:
        json.dump(model.landmark_vertex_ids, f, indent=1, sort_keys=True)
        f.write("\n")


def load_model_bundle(directory) -> ParametricFaceModel:
    directory = Path(directory)
    mean = plyio.load_ply(directory / "mean.ply")
    masks = plyio.load_ply(directory / "masks.ply")
    with open(directory / "sigmas.json") as f:
        sig = json.load(f)
    with open(directory / "landmarks.json") as f:
        landmarks = {k: int(v) for k, v in json.load(f).items()}
    V = mean.num_vertices
    shape_basis = np.zeros((0, V, 3))
    if (directory / "shape_basis.pfm").exists():
        shape_basis = imgio.load_pfm(directory / "shape_basis.pfm").astype(np.float64)
    expr_basis = np.zeros((0, V, 3))
    if (directory / "expr_basis.pfm").exists():
        expr_basis = imgio.load_pfm(directory / "expr_basis.pfm").astype(np.float64)
    return ParametricFaceModel(
        mean_shape=mean.vertices, faces=mean.faces,
        shape_basis=shape_basis, expression_basis=expr_basis,
        sigma_shape=np.asarray(sig["sigma_shape"], dtype=np.float64),
        sigma_exp=np.asarray(sig["sigma_exp"], dtype=np.float64),
        mean_albedo=mean.attributes["albedo"],
        landmark_vertex_ids=landmarks,
        region_masks=dict(masks.attributes))
