"""Synthetic world: procedural face/body models, actor, and scenario rendering.

Everything downstream is verified against sequences produced here: the actor's
head is an instance of the parametric face model, its motion is driven by the
same skeleton/LBS machinery the rig uses, and every scripted parameter is
written to truth.json.

Conventions: canonical world = camera frame of calibration frame 0; x right,
y down, z forward; the actor faces the camera (face normals point to -z).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, project_many
from .errors import ScenarioError
from .facemodel import ParametricFaceModel, evaluate_vertices
from .geometry import (RigidTransform, TriMesh, build_vertex_adjacency,
                       compute_vertex_normals)
from .meshgen import open_cylinder, superellipsoid, uv_sphere
from .raster import rasterize, render_synthetic
from .rig import (BodyModel, Joint, Skeleton, default_joint_limits,
                  linear_blend_skin)
from .sequence import LandmarkTrack, RGBDFrame, SequenceStore, save_sequence
from .shading import default_lighting

LANDMARK_NAMES = [
    "eye_l_outer", "eye_l_inner", "eye_l_top", "eye_l_bottom",
    "eye_r_inner", "eye_r_outer", "eye_r_top", "eye_r_bottom",
    "pupil_l", "pupil_r",
    "nose_tip", "chin", "mouth_l", "mouth_r", "brow_l", "brow_r", "forehead",
]

_SKIN = np.array([0.79, 0.60, 0.50])
_LIPS = np.array([0.64, 0.33, 0.32])
_SCLERA = np.array([0.93, 0.91, 0.88])
_BROW = np.array([0.33, 0.24, 0.17])
_PUPIL = np.array([0.06, 0.05, 0.05])
_IRIS = np.array([0.28, 0.20, 0.12])


def _smooth_on_mesh(values: np.ndarray, adjacency, iterations: int) -> np.ndarray:
    """Repeated 1-ring averaging used to shape random fields."""
    from scipy import sparse

    n = len(values)
    rows, cols = [], []
    for i, nb in enumerate(adjacency):
        ring = np.append(nb, i)
        rows.append(np.full(len(ring), i))
        cols.append(ring)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.ones(len(rows))
    A = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    A = sparse.diags(1.0 / np.asarray(A.sum(axis=1)).ravel()) @ A
    vals = values.astype(np.float64)
    for _ in range(iterations):
        vals = A @ vals
    return vals


def _smoothstep(x, a, b):
    t = np.clip((x - a) / (b - a), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _nearest_vertex(points: np.ndarray, target: np.ndarray) -> int:
    return int(np.argmin(np.linalg.norm(points - target, axis=1)))


# ---------------------------------------------------------------------------
# face model

def make_face_model(seed: int = 7, n_shape: int = 8, n_expression: int = 12,
                    rings: int = 56, segments: int = 66) -> ParametricFaceModel:
    """Procedural head model: ellipsoid with nose/eye/mouth features, smooth
    orthonormal shape and expression bases, skin-like albedo, region masks.

    The model lives in head-local coordinates (centered at the head center,
    facing -z). Basis modes are mutually orthonormal; expression modes are
    supported only inside the face mask.
    """
    rng = np.random.default_rng(seed)
    radii = np.array([0.085, 0.112, 0.092])
    head = uv_sphere(radii, (0.0, 0.0, 0.0), rings=rings, segments=segments)
    dirs = head.attributes["dir"]
    V = head.num_vertices
    adjacency = build_vertex_adjacency(head.faces, V)

    def angle_from(d):
        d = np.asarray(d, dtype=np.float64)
        d = d / np.linalg.norm(d)
        return np.arccos(np.clip(dirs @ d, -1.0, 1.0))

    # feature displacements along the outward direction
    disp = np.zeros(V)
    a_nose = angle_from([0.0, 0.10, -1.0])
    disp += 0.028 * np.cos(np.clip(a_nose / np.radians(24.0), 0, 1) * np.pi / 2) ** 2 * (a_nose < np.radians(24.0))
    d_eye_l = np.array([-0.36, -0.21, -0.91])
    d_eye_r = np.array([0.36, -0.21, -0.91])
    for d_eye in (d_eye_l, d_eye_r):
        a = angle_from(d_eye)
        disp -= 0.005 * _smoothstep(np.radians(11.0) - a, 0.0, np.radians(8.0))
        a_brow = angle_from(d_eye + np.array([0.0, -0.16, 0.0]))
        disp += 0.004 * _smoothstep(np.radians(9.0) - a_brow, 0.0, np.radians(7.0))
    a_mouth = angle_from([0.0, 0.42, -0.88])
    disp += 0.003 * _smoothstep(np.radians(8.0) - a_mouth, 0.0, np.radians(6.0))
    mean_shape = head.vertices + dirs * disp[:, None]

    # region masks
    a_face = angle_from([0.0, 0.06, -1.0])
    face_feather = 1.0 - _smoothstep(a_face, np.radians(50.0), np.radians(68.0))
    face_mask = (face_feather > 0).astype(np.float64)

    def eye_axes(d_eye):
        """Right-handed eye frame: ux points to image right (+x), uy down (+y)."""
        d = d_eye / np.linalg.norm(d_eye)
        ux = np.cross(d, np.array([0.0, 1.0, 0.0]))
        ux /= np.linalg.norm(ux)
        if ux[0] < 0:
            ux = -ux
        uy = np.cross(d, ux)
        if uy[1] < 0:
            uy = -uy
        return d, ux, uy

    def eye_ellipse(d_eye, wu, wv):
        d, ux, uy = eye_axes(d_eye)
        e = dirs - d
        du = e @ ux
        dv = e @ uy
        return (du / wu) ** 2 + (dv / wv) ** 2

    eye_left = (eye_ellipse(d_eye_l, 0.14, 0.085) <= 1.0).astype(np.float64)
    eye_right = (eye_ellipse(d_eye_r, 0.14, 0.085) <= 1.0).astype(np.float64)
    mouth_q = eye_ellipse(np.array([0.0, 0.42, -0.88]), 0.17, 0.08)
    mouth = (mouth_q <= 1.0).astype(np.float64)

    # albedo
    albedo = np.tile(_SKIN, (V, 1))
    albedo += _smooth_on_mesh(rng.normal(0, 0.35, size=(V, 3)), adjacency, 25) * 0.25
    lips_w = np.clip(1.0 - mouth_q, 0, 1)[:, None]
    albedo = albedo * (1 - lips_w * mouth[:, None]) + _LIPS * lips_w * mouth[:, None]
    albedo[eye_left > 0] = _SCLERA
    albedo[eye_right > 0] = _SCLERA
    for d_eye in (d_eye_l, d_eye_r):
        a_brow = angle_from(d_eye + np.array([0.0, -0.17, 0.0]))
        bw = _smoothstep(np.radians(8.0) - a_brow, 0.0, np.radians(5.0))[:, None]
        albedo = albedo * (1 - bw) + _BROW * bw
    albedo = np.clip(albedo, 0.02, 0.98)

    # bases: smooth random fields, expressions windowed to the face,
    # shape tapered away from the neck attachment, then joint Gram-Schmidt
    neck_taper = 1.0 - _smoothstep(dirs[:, 1], 0.55, 0.9)
    fields = []
    for _ in range(n_expression):
        f = _smooth_on_mesh(rng.normal(size=(V, 3)), adjacency, 12)
        fields.append(f * face_feather[:, None])
    for _ in range(n_shape):
        f = _smooth_on_mesh(rng.normal(size=(V, 3)), adjacency, 12)
        fields.append(f * neck_taper[:, None])
    flat = np.stack([f.reshape(-1) for f in fields])
    ortho = []
    for row in flat:
        for q in ortho:
            row = row - (row @ q) * q
        row = row / np.linalg.norm(row)
        ortho.append(row)
    ortho = np.stack(ortho).reshape(len(fields), V, 3)
    expression_basis = ortho[:n_expression]
    shape_basis = ortho[n_expression:]

    sigma_shape = np.linspace(0.30, 0.12, n_shape)
    sigma_exp = np.linspace(0.25, 0.10, n_expression)

    # landmark vertex ids
    def on_surface(d):
        d = np.asarray(d, dtype=np.float64)
        return _nearest_vertex(dirs, d / np.linalg.norm(d))

    def eye_landmarks(d_eye, prefix, outer_sign):
        d, ux, uy = eye_axes(d_eye)
        return {
            f"{prefix}_outer": _nearest_vertex(dirs, d + outer_sign * 0.14 * ux),
            f"{prefix}_inner": _nearest_vertex(dirs, d - outer_sign * 0.14 * ux),
            f"{prefix}_top": _nearest_vertex(dirs, d - 0.085 * uy),
            f"{prefix}_bottom": _nearest_vertex(dirs, d + 0.085 * uy),
        }

    landmarks: dict[str, int] = {}
    # left eye: outer corner on image left (-x); right eye: outer on image right
    landmarks.update(eye_landmarks(d_eye_l, "eye_l", outer_sign=-1.0))
    landmarks.update(eye_landmarks(d_eye_r, "eye_r", outer_sign=+1.0))
    landmarks["nose_tip"] = on_surface([0.0, 0.10, -1.0])
    landmarks["chin"] = on_surface([0.0, 0.88, -0.48])
    landmarks["mouth_l"] = on_surface([-0.17 * 0.9, 0.42, -0.88])
    landmarks["mouth_r"] = on_surface([0.17 * 0.9, 0.42, -0.88])
    landmarks["brow_l"] = on_surface(d_eye_l + np.array([0.0, -0.17, 0.0]))
    landmarks["brow_r"] = on_surface(d_eye_r + np.array([0.0, -0.17, 0.0]))
    landmarks["forehead"] = on_surface([0.0, -0.55, -0.75])

    return ParametricFaceModel(
        mean_shape=mean_shape, faces=head.faces.copy(),
        shape_basis=shape_basis, expression_basis=expression_basis,
        sigma_shape=sigma_shape, sigma_exp=sigma_exp,
        mean_albedo=albedo, landmark_vertex_ids=landmarks,
        region_masks={"face": face_mask, "face_feather": face_feather,
                      "eye_left": eye_left, "eye_right": eye_right,
                      "mouth": mouth})


# ---------------------------------------------------------------------------
# body model

def _band_skinning(vertices: np.ndarray) -> np.ndarray:
    """Smooth head/neck/torso weight bands over world y (y grows downward)."""
    y = vertices[:, 1]
    w_head = 1.0 - _smoothstep(y, -0.045, 0.045)
    w_torso = _smoothstep(y, 0.06, 0.15)
    overlap = np.minimum(w_head, w_torso)
    w_head = w_head - 0.5 * overlap
    w_torso = w_torso - 0.5 * overlap
    w_neck = np.clip(1.0 - w_head - w_torso, 0.0, 1.0)
    W = np.stack([w_torso, w_neck, w_head], axis=1)
    return W / W.sum(axis=1, keepdims=True)


def _default_skeleton() -> Skeleton:
    limits = default_joint_limits()
    torso = np.array([0.0, 0.34, 1.07])
    neck = np.array([0.0, 0.10, 1.06])
    head = np.array([0.0, -0.03, 1.05])
    return Skeleton([
        Joint("torso", torso, limits[0]),
        Joint("neck", neck - torso, limits[1]),
        Joint("head", head - neck, limits[2]),
    ])


def make_body_model(seed: int = 11, n_shape: int = 10) -> BodyModel:
    """Generic upper-body template with shape modes, skeleton, and skinning."""
    rng = np.random.default_rng(seed)
    head = uv_sphere((0.080, 0.105, 0.085), (0.0, -0.09, 1.06), rings=16, segments=22)
    neck = open_cylinder(0.050, (0.0, -0.02, 1.05), (0.0, 0.16, 1.06), rings=5, segments=16)
    torso = superellipsoid((0.165, 0.205, 0.110), (0.0, 0.26, 1.07),
                           exponent=2.4, rings=18, segments=26)
    verts = np.concatenate([head.vertices, neck.vertices, torso.vertices])
    faces = np.concatenate([head.faces, neck.faces + head.num_vertices,
                            torso.faces + head.num_vertices + neck.num_vertices])
    template = TriMesh(verts, faces, compute_vertex_normals(verts, faces))
    V = template.num_vertices

    adjacency = build_vertex_adjacency(faces, V)
    fields = []
    for _ in range(n_shape):
        fields.append(_smooth_on_mesh(rng.normal(size=(V, 3)), adjacency, 10))
    flat = np.stack([f.reshape(-1) for f in fields])
    ortho = []
    for row in flat:
        for q in ortho:
            row = row - (row @ q) * q
        row /= np.linalg.norm(row)
        ortho.append(row)
    shape_basis = np.stack(ortho).reshape(n_shape, V, 3)
    sigma = np.linspace(0.30, 0.10, n_shape)

    t0 = head.num_vertices + neck.num_vertices
    tc = np.array([0.0, 0.26, 1.07])
    markers = {
        "shoulder_l": t0 + _nearest_vertex(torso.vertices, tc + [-0.165, -0.16, -0.02]),
        "shoulder_r": t0 + _nearest_vertex(torso.vertices, tc + [0.165, -0.16, -0.02]),
        "chest": t0 + _nearest_vertex(torso.vertices, tc + [0.0, -0.07, -0.11]),
        "neck_base": head.num_vertices + _nearest_vertex(neck.vertices, [0.0, 0.14, 1.01]),
        "head_top": _nearest_vertex(head.vertices, [0.0, -0.195, 1.06]),
        "head_front": _nearest_vertex(head.vertices, [0.0, -0.09, 0.975]),
    }
    return BodyModel(template=template, shape_basis=shape_basis,
                     sigma_shape=sigma, skeleton=_default_skeleton(),
                     skinning=_band_skinning(verts), marker_vertex_ids=markers)


# ---------------------------------------------------------------------------
# actor

@dataclass
class EyeFrame:
    """Rest-frame eye coordinate system derived from the corner/lid vertices."""

    center: np.ndarray
    ux: np.ndarray        # unit vector, outer -> inner corner direction
    uy: np.ndarray        # unit vector, top -> bottom lid direction
    half_w: float
    half_h: float


def eye_frame(vertices: np.ndarray, ids: dict[str, int], prefix: str) -> EyeFrame:
    c_out = vertices[ids[f"{prefix}_outer"]]
    c_in = vertices[ids[f"{prefix}_inner"]]
    l_top = vertices[ids[f"{prefix}_top"]]
    l_bot = vertices[ids[f"{prefix}_bottom"]]
    center = 0.25 * (c_out + c_in + l_top + l_bot)
    ux = c_in - c_out
    half_w = np.linalg.norm(ux) / 2
    ux = ux / (2 * half_w)
    if ux[0] < 0:  # orient toward image right so +yaw moves the pupil right
        ux = -ux
    uy = l_bot - l_top
    half_h = np.linalg.norm(uy) / 2
    uy = uy / (2 * half_h)
    if uy[1] < 0:
        uy = -uy
    return EyeFrame(center, ux, uy, float(half_w), float(half_h))


@dataclass
class SyntheticActor:
    """Ground-truth actor: face-model head + neck + torso, rigged and textured."""

    model: ParametricFaceModel
    alpha: np.ndarray
    head_origin: np.ndarray
    rest_vertices: np.ndarray         # (V, 3) with alpha applied, world coords
    faces: np.ndarray
    albedo: np.ndarray                # (V, 3) without pupils
    skeleton: Skeleton
    skinning: np.ndarray              # (V, 3)
    head_slice: slice                 # actor vertices backed by the face model
    landmark_ids: dict[str, int]      # in actor indexing (== model indexing)
    eye_left: EyeFrame
    eye_right: EyeFrame

    @property
    def face_pose_true(self) -> RigidTransform:
        """Face-model pose of the canonical (undeformed) actor."""
        return RigidTransform(np.eye(3), self.head_origin)

    def mesh(self) -> TriMesh:
        return TriMesh(self.rest_vertices, self.faces,
                       compute_vertex_normals(self.rest_vertices, self.faces))

    def expression_offsets(self, delta: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.rest_vertices)
        if delta is not None and len(delta):
            out[self.head_slice] = np.einsum("k,kvi->vi", np.asarray(delta, dtype=np.float64),
                                             self.model.expression_basis)
        return out

    def posed_vertices(self, delta=None, joint_angles_rad=None,
                       root: RigidTransform | None = None) -> np.ndarray:
        offsets = self.expression_offsets(delta) if delta is not None else None
        angles = (joint_angles_rad if joint_angles_rad is not None
                  else np.zeros((self.skeleton.num_joints, 3)))
        transforms = self.skeleton.skinning_transforms(angles, root)
        return linear_blend_skin(self.rest_vertices, self.skinning, transforms, offsets)

    def part_pose(self, part_index: int, joint_angles_rad, root=None) -> RigidTransform:
        """Rigid motion of a body part relative to canonical (skinning transform)."""
        angles = (joint_angles_rad if joint_angles_rad is not None
                  else np.zeros((self.skeleton.num_joints, 3)))
        return self.skeleton.skinning_transforms(angles, root)[part_index]

    def true_face_pose(self, joint_angles_rad=None, root=None) -> RigidTransform:
        return self.part_pose(2, joint_angles_rad, root).compose(self.face_pose_true)

    def frame_albedo(self, gaze_yaw_deg: float, gaze_pitch_deg: float,
                     closed: bool) -> np.ndarray:
        """Actor albedo with pupils placed for the given gaze (or closed lids)."""
        albedo = self.albedo.copy()
        head = self.rest_vertices
        for frame_, mask_name in ((self.eye_left, "eye_left"), (self.eye_right, "eye_right")):
            sel = np.zeros(len(albedo), dtype=bool)
            sel[self.head_slice] = self.model.region_masks[mask_name] > 0
            if closed:
                albedo[sel] = _SKIN * 0.96
                continue
            px = frame_.center + (gaze_yaw_deg / 45.0) * frame_.half_w * frame_.ux \
                + (gaze_pitch_deg / 45.0) * frame_.half_h * frame_.uy
            d = np.linalg.norm(head - px, axis=1)
            iris = sel & (d < 0.0042)
            pupil = sel & (d < 0.0022)
            albedo[iris] = _IRIS
            albedo[pupil] = _PUPIL
        return albedo


def make_actor(seed: int = 3, model: ParametricFaceModel | None = None,
               model_seed: int = 7) -> SyntheticActor:
    """Instantiate an actor: sampled face shape + procedural neck/torso."""
    rng = np.random.default_rng(seed)
    model = model or make_face_model(model_seed)
    alpha = rng.normal(size=model.num_shape) * model.sigma_shape * 0.8
    head_origin = np.array([0.0, -0.095, 1.05])
    head_verts = evaluate_vertices(model, alpha) + head_origin

    neck = open_cylinder(0.052, (0.0, -0.02, 1.05), (0.0, 0.17, 1.06),
                         rings=6, segments=20)
    torso = superellipsoid((0.175, 0.21, 0.115) * (1 + rng.uniform(-0.05, 0.05, 3)),
                           (0.0, 0.26, 1.07), exponent=2.6, rings=22, segments=30)

    verts = np.concatenate([head_verts, neck.vertices, torso.vertices])
    nv_head, nv_neck = len(head_verts), neck.num_vertices
    faces = np.concatenate([model.faces, neck.faces + nv_head,
                            torso.faces + nv_head + nv_neck])

    albedo = np.zeros((len(verts), 3))
    albedo[:nv_head] = model.mean_albedo
    albedo[nv_head:nv_head + nv_neck] = _SKIN * 0.97
    # clothing: seeded base color with horizontal stripes and smooth blotches
    base = rng.uniform([0.12, 0.18, 0.30], [0.35, 0.40, 0.60])
    stripe = 0.5 + 0.5 * np.sin(torso.vertices[:, 1] * rng.uniform(55, 75)
                                + rng.uniform(0, np.pi))
    tex = base * (0.75 + 0.45 * stripe[:, None])
    t_adj = build_vertex_adjacency(torso.faces, torso.num_vertices)
    tex += _smooth_on_mesh(rng.normal(0, 0.3, (torso.num_vertices, 3)), t_adj, 8) * 0.3
    albedo[nv_head + nv_neck:] = np.clip(tex, 0.03, 0.95)

    actor = SyntheticActor(
        model=model, alpha=alpha, head_origin=head_origin,
        rest_vertices=verts, faces=faces, albedo=albedo,
        skeleton=_default_skeleton(), skinning=_band_skinning(verts),
        head_slice=slice(0, nv_head),
        landmark_ids=dict(model.landmark_vertex_ids),
        eye_left=EyeFrame(np.zeros(3), np.zeros(3), np.zeros(3), 0, 0),
        eye_right=EyeFrame(np.zeros(3), np.zeros(3), np.zeros(3), 0, 0))
    actor.eye_left = eye_frame(verts, actor.landmark_ids, "eye_l")
    actor.eye_right = eye_frame(verts, actor.landmark_ids, "eye_r")
    return actor


# ---------------------------------------------------------------------------
# pupil landmark placement: invert the corner-ratio gaze convention

def _ratio_residual(P, A, B, target):
    da = np.linalg.norm(P - A)
    db = np.linalg.norm(P - B)
    return da / (da + db) - target


def invert_gaze_ratios(corners: dict[str, np.ndarray], yaw_deg: float,
                       pitch_deg: float) -> np.ndarray:
    """2D point whose corner-distance ratios encode the given yaw/pitch.

    Solves ||P-C_l|| / (||P-C_l|| + ||P-C_r||) = (yaw+45)/90 (and the vertical
    analogue) by Newton iteration from the quad center.
    """
    A, B = corners["left"], corners["right"]
    T, D = corners["top"], corners["bottom"]
    ta = (yaw_deg + 45.0) / 90.0
    tb = (pitch_deg + 45.0) / 90.0
    P = 0.25 * (A + B + T + D)
    for _ in range(60):
        r = np.array([_ratio_residual(P, A, B, ta), _ratio_residual(P, T, D, tb)])
        if np.abs(r).max() < 1e-13:
            break
        J = np.zeros((2, 2))
        eps = 1e-7
        for k in range(2):
            dP = np.zeros(2)
            dP[k] = eps
            J[0, k] = (_ratio_residual(P + dP, A, B, ta) - r[0] - 0.0) / eps
            J[1, k] = (_ratio_residual(P + dP, T, D, tb) - r[1] - 0.0) / eps
        try:
            P = P - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
    return P


# ---------------------------------------------------------------------------
# scenario scripting and rendering

def default_scenario(seed: int = 3) -> dict:
    return {
        "seed": int(seed),
        "model_seed": 7,
        "body_seed": 11,
        "width": 320, "height": 240,
        "fx": 420.0, "fy": 420.0,
        "calibration": {"step_deg": 2.0, "wobble_deg": 0.0},
        "eyes": {"grid_deg": 30.0},
        "driving": {"frames": 120, "max_total_yaw_deg": 28.0,
                    "expression_scale": 1.2, "blink_frames": [55, 56, 57]},
        "depth_noise_std": 0.0,
    }


_SCENARIO_KEYS = set(default_scenario())


def validate_scenario(cfg: dict) -> dict:
    merged = default_scenario()
    for key, value in cfg.items():
        if key not in _SCENARIO_KEYS:
            raise ScenarioError(f"unknown scenario key: {key}")
        if isinstance(merged[key], dict):
            unknown = set(value) - set(merged[key])
            if unknown:
                raise ScenarioError(f"unknown scenario keys in '{key}': {sorted(unknown)}")
            merged[key].update(value)
        else:
            merged[key] = value
    if merged["width"] <= 0 or merged["height"] <= 0:
        raise ScenarioError("image size must be positive")
    return merged


def make_background(width: int, height: int, seed: int) -> np.ndarray:
    """Static textured backdrop, colored away from skin tones."""
    rng = np.random.default_rng(seed + 1000)
    y = np.linspace(0, 1, height)[:, None]
    x = np.linspace(0, 1, width)[None, :]
    img = np.zeros((height, width, 3))
    img[..., 0] = 0.18 + 0.08 * y
    img[..., 1] = 0.30 + 0.10 * y + 0.03 * np.sin(7 * x * np.pi)
    img[..., 2] = 0.33 + 0.06 * x
    for _ in range(6):
        cx, cy, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.25)
        blob = np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / (2 * r ** 2)))
        img += blob[..., None] * rng.uniform(-0.05, 0.05, 3)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class FrameScript:
    """Scripted parameters of one synthetic frame."""

    delta: np.ndarray
    joint_angles_deg: np.ndarray       # (3, 3)
    root: RigidTransform
    gaze_yaw: float = 0.0
    gaze_pitch: float = 0.0
    eye_closed: bool = False


def calibration_script(scn: dict, skeleton: Skeleton, n_expression: int) -> list[FrameScript]:
    step = float(scn["calibration"]["step_deg"])
    wobble = float(scn["calibration"]["wobble_deg"])
    sweep = np.concatenate([np.arange(0.0, -90.0 - 1e-9, -step),
                            np.arange(-90.0 + step, 90.0 + 1e-9, step)])
    pivot = skeleton.rest_world_positions()[0]
    out = []
    for i, phi in enumerate(sweep):
        c, s = np.cos(np.radians(phi)), np.sin(np.radians(phi))
        R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        root = RigidTransform.rotation_about_point(R, pivot)
        angles = np.zeros((3, 3))
        if wobble:
            angles[2, 1] = wobble * np.sin(2 * np.pi * 3 * i / max(len(sweep) - 1, 1))
        out.append(FrameScript(delta=np.zeros(n_expression),
                               joint_angles_deg=angles, root=root))
    return out


def eye_grid_script(scn: dict, n_expression: int) -> tuple[list[FrameScript], list[int]]:
    g = float(scn["eyes"]["grid_deg"])
    scripts, classes = [], []
    cls = 0
    for pitch in (-g, 0.0, g):
        for yaw in (-g, 0.0, g):
            scripts.append(FrameScript(delta=np.zeros(n_expression),
                                       joint_angles_deg=np.zeros((3, 3)),
                                       root=RigidTransform.identity(),
                                       gaze_yaw=yaw, gaze_pitch=pitch))
            classes.append(cls)
            cls += 1
    scripts.append(FrameScript(delta=np.zeros(n_expression),
                               joint_angles_deg=np.zeros((3, 3)),
                               root=RigidTransform.identity(), eye_closed=True))
    classes.append(9)
    return scripts, classes


def driving_script(scn: dict, model: ParametricFaceModel, seed: int) -> list[FrameScript]:
    n = int(scn["driving"]["frames"])
    nd = model.num_expression
    blink = set(scn["driving"].get("blink_frames", []))
    scale = float(scn["driving"]["expression_scale"])
    rng = np.random.default_rng(seed + 77)
    active = rng.choice(nd, size=min(4, nd), replace=False)
    periods = rng.uniform(35, 80, size=len(active))
    phases = rng.uniform(0, 2 * np.pi, size=len(active))
    out = []
    for t in range(n):
        delta = np.zeros(nd)
        if t > 0:
            env = min(t / 10.0, 1.0)  # ease in so frame 0 is the rest pose
            for k, mode in enumerate(active):
                delta[mode] = (scale * model.sigma_exp[mode] * env
                               * np.sin(2 * np.pi * t / periods[k] + phases[k]))
        angles = np.zeros((3, 3))
        if t > 0:
            env = min(t / 12.0, 1.0)
            angles[0, 1] = 12.0 * env * np.sin(2 * np.pi * t / 90.0)
            angles[0, 0] = 3.0 * env * np.sin(2 * np.pi * t / 150.0 + 1.0)
            angles[1, 1] = 6.0 * env * np.sin(2 * np.pi * t / 75.0 + 0.7)
            angles[2, 1] = 9.0 * env * np.sin(2 * np.pi * t / 60.0)
            angles[2, 0] = 5.0 * env * np.sin(2 * np.pi * t / 85.0 + 2.0)
            angles[2, 2] = 2.0 * env * np.sin(2 * np.pi * t / 110.0 + 0.3)
        gaze_yaw = 26.0 * np.sin(2 * np.pi * t / 47.0) if t else 0.0
        gaze_pitch = 19.0 * np.sin(2 * np.pi * t / 71.0 + 0.8) if t else 0.0
        out.append(FrameScript(delta=delta, joint_angles_deg=angles,
                               root=RigidTransform.identity(),
                               gaze_yaw=float(gaze_yaw), gaze_pitch=float(gaze_pitch),
                               eye_closed=t in blink))
    return out


def render_script_frame(actor: SyntheticActor, script: FrameScript,
                        K: CameraIntrinsics, light: np.ndarray,
                        background: np.ndarray,
                        depth_noise_std: float = 0.0,
                        rng: np.random.Generator | None = None):
    """Render one scripted frame; returns (frame, alpha, landmarks dict)."""
    angles_rad = np.radians(script.joint_angles_deg)
    verts = actor.posed_vertices(script.delta, angles_rad, script.root)
    albedo = actor.frame_albedo(script.gaze_yaw, script.gaze_pitch, script.eye_closed)
    mesh = TriMesh(verts, actor.faces, compute_vertex_normals(verts, actor.faces))
    rendered = render_synthetic(mesh, RigidTransform.identity(), K, light, albedo,
                                background=background)
    depth = rendered.depth.astype(np.float64)
    if depth_noise_std > 0:
        noise = (rng or np.random.default_rng(0)).normal(0, depth_noise_std, depth.shape)
        depth = np.where(depth > 0, np.maximum(depth + noise, 1e-3), 0.0)
    frame = RGBDFrame(color=rendered.color, depth=depth.astype(np.float32),
                      intrinsics=K, time_index=0)

    # landmarks: project deformed landmark vertices, mask occluded/backfacing
    normals = mesh.normals
    names = [n for n in LANDMARK_NAMES if n not in ("pupil_l", "pupil_r")]
    ids = np.array([actor.landmark_ids[n] for n in names])
    pts = verts[ids]
    uv, in_front = project_many(pts, K)
    vis = in_front.copy()
    view = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    vis &= np.einsum("ij,ij->i", normals[ids], view) < -0.15
    ui = np.clip(np.round(uv[:, 0]).astype(int), 0, K.width - 1)
    vi = np.clip(np.round(uv[:, 1]).astype(int), 0, K.height - 1)
    zbuf = rendered.depth[vi, ui]
    vis &= (zbuf > 0) & (np.abs(zbuf - pts[:, 2]) < 0.02)
    vis &= (uv[:, 0] >= 0) & (uv[:, 0] < K.width) & (uv[:, 1] >= 0) & (uv[:, 1] < K.height)

    lm: dict[str, np.ndarray] = {}
    for i, n in enumerate(names):
        lm[n] = uv[i] if vis[i] else np.array([np.nan, np.nan])

    for prefix, pname in (("eye_l", "pupil_l"), ("eye_r", "pupil_r")):
        need = [f"{prefix}_outer", f"{prefix}_inner", f"{prefix}_top", f"{prefix}_bottom"]
        if any(np.isnan(lm[k]).any() for k in need):
            lm[pname] = np.array([np.nan, np.nan])
            continue
        corners = {"left": lm[f"{prefix}_outer"] if prefix == "eye_l" else lm[f"{prefix}_inner"],
                   "right": lm[f"{prefix}_inner"] if prefix == "eye_l" else lm[f"{prefix}_outer"],
                   "top": lm[f"{prefix}_top"], "bottom": lm[f"{prefix}_bottom"]}
        # image-left corner first: the outer corner of the left eye is on the
        # image left; for the right eye it is the inner corner
        if script.eye_closed:
            lm[pname] = 0.5 * (corners["left"] + corners["right"])
        else:
            lm[pname] = invert_gaze_ratios(corners, script.gaze_yaw, script.gaze_pitch)

    return frame, rendered.coverage.astype(np.float32), lm


def _landmark_array(lm_frames: list[dict[str, np.ndarray]]) -> LandmarkTrack:
    pts = np.full((len(lm_frames), len(LANDMARK_NAMES), 2), np.nan)
    for t, lm in enumerate(lm_frames):
        for i, name in enumerate(LANDMARK_NAMES):
            if name in lm:
                pts[t, i] = lm[name]
    return LandmarkTrack(names=list(LANDMARK_NAMES), points=pts)


def render_scenario(cfg: dict, out_dir) -> dict:
    """Render calibration, eye-grid, and driving sequences plus truth.json."""
    scn = validate_scenario(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    K = CameraIntrinsics(scn["fx"], scn["fy"], scn["width"] / 2.0,
                         scn["height"] / 2.0, scn["width"], scn["height"])
    model = make_face_model(scn["model_seed"])
    actor = make_actor(scn["seed"], model=model)
    light = default_lighting()
    background = make_background(scn["width"], scn["height"], scn["seed"])
    rng = np.random.default_rng(scn["seed"] + 5)

    truth: dict = {
        "seed": scn["seed"], "model_seed": scn["model_seed"],
        "body_seed": scn["body_seed"],
        "alpha_true": actor.alpha.tolist(),
        "light": light.reshape(-1).tolist(),
        "landmark_names": list(LANDMARK_NAMES),
        "face_pose_canonical": actor.face_pose_true.matrix().reshape(-1).tolist(),
        "sequences": {},
    }

    def emit(name: str, scripts: list[FrameScript], extra: dict | None = None):
        frames, alphas, lms = [], [], []
        seq_truth = {"root": [], "head_pose": [], "torso_pose": [],
                     "delta": [], "joint_angles_deg": [], "gaze": []}
        for t, sc in enumerate(scripts):
            frame, alpha, lm = render_script_frame(
                actor, sc, K, light, background,
                depth_noise_std=float(scn["depth_noise_std"]), rng=rng)
            frame.time_index = t
            frames.append(frame)
            alphas.append(alpha)
            lms.append(lm)
            angles_rad = np.radians(sc.joint_angles_deg)
            seq_truth["root"].append(sc.root.matrix().reshape(-1).tolist())
            seq_truth["head_pose"].append(
                actor.part_pose(2, angles_rad, sc.root).matrix().reshape(-1).tolist())
            seq_truth["torso_pose"].append(
                actor.part_pose(0, angles_rad, sc.root).matrix().reshape(-1).tolist())
            seq_truth["delta"].append(sc.delta.tolist())
            seq_truth["joint_angles_deg"].append(sc.joint_angles_deg.tolist())
            seq_truth["gaze"].append([sc.gaze_yaw, sc.gaze_pitch, bool(sc.eye_closed)])
        if extra:
            seq_truth.update(extra)
        seq = SequenceStore(frames=frames, landmarks=_landmark_array(lms),
                            background_image=background,
                            eye_closed=np.array([s.eye_closed for s in scripts]),
                            alphas=alphas)
        # body-fit marker pixels on frame 0 (only meaningful for calibration)
        if name == "calibration":
            seq.extra_meta["markers"] = _marker_pixels(actor, K)
        save_sequence(out_dir / name, seq)
        truth["sequences"][name] = seq_truth

    emit("calibration", calibration_script(scn, actor.skeleton, model.num_expression))
    eye_scripts, classes = eye_grid_script(scn, model.num_expression)
    emit("eyes", eye_scripts, extra={"classes": classes})
    emit("driving", driving_script(scn, model, scn["seed"]))

    with open(out_dir / "truth.json", "w") as f:
        json.dump(truth, f, indent=1, sort_keys=True)
        f.write("\n")
    return truth


def _marker_pixels(actor: SyntheticActor, K: CameraIntrinsics) -> dict:
    """Frame-0 pixel positions of the 6 body-fit markers on the actor."""
    verts = actor.rest_vertices
    tc = np.array([0.0, 0.26, 1.07])
    targets = {
        "shoulder_l": tc + [-0.170, -0.165, -0.02],
        "shoulder_r": tc + [0.170, -0.165, -0.02],
        "chest": tc + [0.0, -0.07, -0.115],
        "neck_base": np.array([0.0, 0.15, 1.008]),
        "head_top": actor.head_origin + [0.0, -0.112, 0.0],
        "head_front": actor.head_origin + [0.0, 0.0, -0.092],
    }
    out = {}
    for name, t in targets.items():
        vid = _nearest_vertex(verts, np.asarray(t, dtype=np.float64))
        uv, _ = project_many(verts[vid][None], K)
        out[name] = [float(uv[0, 0]), float(uv[0, 1])]
    return out
