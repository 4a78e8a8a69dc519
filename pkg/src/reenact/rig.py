"""Actor rig: skeleton, linear blend skinning, IK, and rig construction.

Rig construction transfers blendshapes from the fitted face model, fits a
parametric body model for skeleton/skinning transfer, and re-tracks the
calibration sequence per part (head/body).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import imgio, plyio
from .errors import MarkerDegenerateError, TransferCoverageError
from .facemodel import (FaceFitResult, ParametricFaceModel, evaluate_vertices)
from .geometry import (RigidTransform, TriMesh, axis_angle_from_rotation,
                       euler_xyz_to_rotation, rigid_align, rotation_angle_deg)
from .icp import ICPConfig, icp_point_to_plane
from .optim import LMConfig, lm_minimize, numeric_jacobian
from .sequence import SequenceStore

PART_NAMES = ("body", "neck", "head")


# ---------------------------------------------------------------------------
# skeleton and skinning

@dataclass
class Joint:
    name: str
    offset: np.ndarray                 # (3,) rest position relative to parent
    limits_deg: np.ndarray             # (3, 2) per-axis [lo, hi]

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64)
        self.limits_deg = np.asarray(self.limits_deg, dtype=np.float64).reshape(3, 2)


@dataclass
class Skeleton:
    """Serial chain torso -> neck -> head; each joint has 3 rotational DOF.

    Joint rotations are intrinsic XYZ Euler angles in radians. FK composes
    world_j = world_{j-1} o Translate(offset_j) o Rot(theta_j), with an
    optional root transform in front.
    """

    joints: list[Joint]

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    def rest_world_positions(self) -> np.ndarray:
        return np.cumsum([j.offset for j in self.joints], axis=0)

    def rest_angles(self) -> np.ndarray:
        return np.zeros((self.num_joints, 3))

    def limits(self) -> np.ndarray:
        return np.stack([j.limits_deg for j in self.joints])

    def fk(self, angles_rad: np.ndarray,
           root: RigidTransform | None = None) -> list[RigidTransform]:
        """World transform of every joint frame."""
        angles_rad = np.asarray(angles_rad, dtype=np.float64).reshape(self.num_joints, 3)
        world = root or RigidTransform.identity()
        out = []
        for j, joint in enumerate(self.joints):
            R = euler_xyz_to_rotation(angles_rad[j])
            local = RigidTransform(R, joint.offset)
            world = world.compose(local)
            out.append(world)
        return out

    def skinning_transforms(self, angles_rad: np.ndarray,
                            root: RigidTransform | None = None) -> list[RigidTransform]:
        """M_j = world_j o rest_j^-1; exactly identity at zero pose and root."""
        rest_pos = self.rest_world_positions()
        out = []
        for j, world in enumerate(self.fk(angles_rad, root)):
            out.append(world.compose(RigidTransform(np.eye(3), -rest_pos[j])))
        return out

    def to_dict(self) -> dict:
        return {"joints": [{"name": j.name, "offset": j.offset.tolist(),
                            "limits_deg": j.limits_deg.tolist()} for j in self.joints]}

    @staticmethod
    def from_dict(d: dict) -> "Skeleton":
        return Skeleton([Joint(j["name"], np.asarray(j["offset"]),
                               np.asarray(j["limits_deg"])) for j in d["joints"]])


def default_joint_limits() -> list[np.ndarray]:
    """Per-joint limits: torso +-30, neck +-45, head +-60 degrees per axis."""
    return [np.array([[-30.0, 30.0]] * 3), np.array([[-45.0, 45.0]] * 3),
            np.array([[-60.0, 60.0]] * 3)]


def linear_blend_skin(vertices: np.ndarray, weights: np.ndarray,
                      transforms: list[RigidTransform],
                      offsets: np.ndarray | None = None) -> np.ndarray:
    """LBS: v' = p + sum_j w_j (M_j p - p), with p = v + offsets.

    The correction form makes a zero pose reproduce the rest vertices bitwise
    (assumes weight rows sum to 1, which holds after renormalization).
    """
    p = np.asarray(vertices, dtype=np.float64)
    if offsets is not None:
        p = p + offsets
    out = p.copy()
    for j, M in enumerate(transforms):
        corr = p @ (M.rotation - np.eye(3)).T + M.translation
        out += weights[:, j:j + 1] * corr
    return out


def skin(rig: "ActorRig", joint_angles_rad: np.ndarray, delta: np.ndarray | None = None,
         root: RigidTransform | None = None) -> TriMesh:
    """Deform the rig proxy: blendshape offsets in rest pose, then LBS."""
    offsets = None
    if delta is not None and rig.blendshapes.shape[0]:
        delta = np.asarray(delta, dtype=np.float64)
        if len(delta) != rig.blendshapes.shape[0]:
            raise ValueError("delta length does not match rig blendshape count")
        offsets = np.einsum("k,kvi->vi", delta, rig.blendshapes)
    transforms = rig.skeleton.skinning_transforms(joint_angles_rad, root)
    verts = linear_blend_skin(rig.proxy.vertices, rig.skinning, transforms, offsets)
    return rig.proxy.with_vertices(verts)


# ---------------------------------------------------------------------------
# inverse kinematics

@dataclass
class PoseTransfer:
    joint_angles_rad: np.ndarray       # (J, 3)
    rotation_error_deg: float
    translation_error_m: float
    reachable: bool


def solve_ik(relative_head_pose: RigidTransform, skeleton: Skeleton,
             prior_angles_rad: np.ndarray | None = None,
             damping: float = 1e-2, prior_weight: float = 1e-3,
             max_iterations: int = 80,
             rot_tol_deg: float = 1.0, trans_tol_m: float = 0.005) -> PoseTransfer:
    """Damped least-squares IK for the 9-DOF chain.

    Drives the head joint frame to `relative_head_pose` composed with its rest
    frame. The rest-pose prior resolves the 9-for-6 redundancy. Returns a
    clamped best effort flagged unreachable when the tolerance is not met.
    """
    J_n = skeleton.num_joints
    rest_head = RigidTransform(np.eye(3), skeleton.rest_world_positions()[-1])
    target = relative_head_pose.compose(rest_head)
    prior = (prior_angles_rad if prior_angles_rad is not None
             else skeleton.rest_angles()).reshape(-1).astype(np.float64)
    theta = prior.copy()
    limits = np.radians(skeleton.limits().reshape(-1, 2))

    def residual(th):
        head = skeleton.fk(th.reshape(J_n, 3))[-1]
        rot_err = axis_angle_from_rotation(head.rotation @ target.rotation.T)
        pos_err = head.translation - target.translation
        return np.concatenate([rot_err, pos_err * 10.0,  # mm-ish scale balance
                               np.sqrt(prior_weight) * (th - prior)])

    for _ in range(max_iterations):
        r = residual(theta)
        if np.linalg.norm(r[:6]) < 1e-12:
            break
        J = numeric_jacobian(residual, theta, eps=1e-7)
        A = J.T @ J + (damping ** 2) * np.eye(len(theta))
        step = np.linalg.solve(A, -J.T @ r)
        theta = np.clip(theta + step, limits[:, 0], limits[:, 1])
        if np.linalg.norm(step) < 1e-12:
            break

    head = skeleton.fk(theta.reshape(J_n, 3))[-1]
    rot_err = rotation_angle_deg(head.rotation @ target.rotation.T)
    trans_err = float(np.linalg.norm(head.translation - target.translation))
    reachable = rot_err <= rot_tol_deg and trans_err <= trans_tol_m
    return PoseTransfer(joint_angles_rad=theta.reshape(J_n, 3),
                        rotation_error_deg=rot_err, translation_error_m=trans_err,
                        reachable=reachable)


# ---------------------------------------------------------------------------
# body model and fitting

@dataclass
class BodyModel:
    """Skinned parametric body stand-in: template + 10 shape modes + skeleton."""

    template: TriMesh
    shape_basis: np.ndarray            # (Nb, V, 3)
    sigma_shape: np.ndarray            # (Nb,)
    skeleton: Skeleton
    skinning: np.ndarray               # (V, J)
    marker_vertex_ids: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        rows = self.skinning.sum(axis=1)
        if (self.skinning < -1e-9).any() or np.abs(rows - 1.0).max() > 1e-6:
            raise ValueError("skinning weights must be non-negative and rows sum to 1")

    @property
    def num_shape(self) -> int:
        return len(self.shape_basis)

    def vertices(self, beta: np.ndarray, angles_rad: np.ndarray,
                 root: RigidTransform | None = None) -> np.ndarray:
        offsets = np.einsum("k,kvi->vi", np.asarray(beta, dtype=np.float64),
                            self.shape_basis) if self.num_shape else None
        transforms = self.skeleton.skinning_transforms(angles_rad, root)
        return linear_blend_skin(self.template.vertices, self.skinning,
                                 transforms, offsets)


@dataclass
class BodyFitResult:
    beta: np.ndarray
    joint_angles_rad: np.ndarray       # (J, 3)
    root: RigidTransform
    correspondences: np.ndarray        # (N, 2) body vertex -> scan vertex
    energies: list[float]
    converged: bool


def fit_body(body: BodyModel, scan: TriMesh, markers: list[tuple[int, np.ndarray]],
             weights=(10.0, 1.0, 0.01), dense_thres: float = 0.10,
             max_outer: int = 12, lm_iterations: int = 6) -> BodyFitResult:
    """Fit shape/pose of the body model to a scan from 6 marker pairs.

    markers: (template_vertex_id, scan_point) pairs; used both to initialize
    the root transform and as a sparse alignment term. LM over
    [beta, joint angles, root rotation, root translation] with numeric
    Jacobians; dense closest-point correspondences recomputed per outer round.
    """
    if len(markers) < 3:
        raise MarkerDegenerateError("need at least 3 marker pairs")
    mids = np.asarray([m[0] for m in markers], dtype=np.int64)
    mtargets = np.asarray([m[1] for m in markers], dtype=np.float64)
    if np.linalg.matrix_rank(mtargets - mtargets.mean(axis=0), tol=1e-9) < 2:
        raise MarkerDegenerateError("markers are collinear")

    root0 = rigid_align(body.template.vertices[mids], mtargets)
    nb, nj = body.num_shape, body.skeleton.num_joints
    # x = [beta, angles (J*3), root axis-angle, root t]
    x0 = np.zeros(nb + nj * 3 + 6)
    x0[nb + nj * 3:nb + nj * 3 + 3] = axis_angle_from_rotation(root0.rotation)
    x0[nb + nj * 3 + 3:] = root0.translation

    tree = cKDTree(scan.vertices)
    scan_normals = scan.ensure_normals()
    w_m, w_d, w_r = np.sqrt(weights[0]), np.sqrt(weights[1]), np.sqrt(weights[2])

    def unpack(x):
        beta = x[:nb]
        angles = x[nb:nb + nj * 3].reshape(nj, 3)
        root = RigidTransform.from_axis_angle(x[nb + nj * 3:nb + nj * 3 + 3],
                                              x[nb + nj * 3 + 3:])
        return beta, angles, root

    active = np.zeros((0, 2), dtype=np.int64)
    energies: list[float] = []
    converged = False
    for _ in range(max_outer):
        beta, angles, root = unpack(x0)
        verts = body.vertices(beta, angles, root)
        dist, idx = tree.query(verts)
        keep = dist <= dense_thres
        src = np.nonzero(keep)[0]
        active = np.stack([src, idx[keep]], axis=1)
        targets = scan.vertices[active[:, 1]]

        def res_only(x):
            b, a, rt = unpack(x)
            v = body.vertices(b, a, rt)
            r_m = w_m * (v[mids] - mtargets).reshape(-1)
            r_d = w_d * (v[active[:, 0]] - targets).reshape(-1)
            r_r = w_r * np.concatenate([b / body.sigma_shape, a.reshape(-1) * 2.0])
            return np.concatenate([r_m, r_d, r_r])

        def residual_fn(x):
            r = res_only(x)
            return r, numeric_jacobian(res_only, x, eps=1e-7)

        state = lm_minimize(residual_fn, x0,
                            LMConfig(max_iterations=lm_iterations, step_eps=1e-9))
        energies.extend(state.accepted_energies)
        moved = np.linalg.norm(state.x - x0)
        x0 = state.x
        if moved < 1e-8:
            converged = True
            break

    beta, angles, root = unpack(x0)
    return BodyFitResult(beta=beta, joint_angles_rad=angles, root=root,
                         correspondences=active, energies=energies,
                         converged=converged)


# ---------------------------------------------------------------------------
# blendshape / skinning transfer

@dataclass
class BlendshapeTransfer:
    blendshapes: np.ndarray            # (Nd, Vp, 3)
    face_mask: np.ndarray              # (Vp,) feathered in [0, 1]
    masks: dict[str, np.ndarray]       # transferred semantic masks
    model_vertex: np.ndarray           # (Vp,) nearest model vertex or -1
    coverage: float


def transfer_blendshapes(fit: FaceFitResult, model: ParametricFaceModel,
                         proxy: TriMesh, thres_transfer: float = 0.005,
                         min_coverage: float = 0.5) -> BlendshapeTransfer:
    """Copy per-vertex blendshape displacements from the fitted model onto the proxy.

    Every proxy vertex closer than thres_transfer to the posed fitted model
    receives the rotated displacement of its nearest model vertex, scaled by
    the model's feathering alpha; displacements vanish outside the face mask.
    Semantic masks (eyes, mouth) ride along the same correspondence.
    """
    params = fit.params
    posed = params.pose.apply(evaluate_vertices(model, params.alpha, params.delta))
    tree = cKDTree(posed)
    dist, idx = tree.query(proxy.vertices)
    matched = dist <= thres_transfer

    feather = model.region_masks.get("face_feather",
                                     model.region_masks.get("face", np.ones(model.num_vertices)))
    face_mask = np.zeros(proxy.num_vertices)
    face_mask[matched] = feather[idx[matched]]

    R = params.pose.rotation
    nd = model.num_expression
    modes = np.zeros((nd, proxy.num_vertices, 3))
    if nd:
        rotated = np.einsum("ij,kvj->kvi", R, model.expression_basis)
        modes[:, matched, :] = rotated[:, idx[matched], :] * face_mask[matched][None, :, None]

    masks: dict[str, np.ndarray] = {}
    for name, ch in model.region_masks.items():
        tr = np.zeros(proxy.num_vertices)
        tr[matched] = ch[idx[matched]]
        masks[name] = tr

    model_vertex = np.full(proxy.num_vertices, -1, dtype=np.int64)
    model_vertex[matched] = idx[matched]

    # coverage: fraction of proxy vertices in the face region that got a match
    in_face = np.zeros(proxy.num_vertices, dtype=bool)
    in_face[matched] = feather[idx[matched]] > 0.0
    near_face = dist <= 4.0 * thres_transfer  # candidates that should have matched
    denom = max(int((near_face & (face_mask > 0)).sum()), int(in_face.sum()), 1)
    coverage = float(in_face.sum()) / denom
    if coverage < min_coverage:
        raise TransferCoverageError(
            f"blendshape transfer covered {coverage:.0%} of face-region proxy vertices")
    return BlendshapeTransfer(blendshapes=modes, face_mask=face_mask, masks=masks,
                              model_vertex=model_vertex, coverage=coverage)


def smooth_vertex_field(values: np.ndarray, adjacency: list[np.ndarray],
                        iterations: int) -> np.ndarray:
    """1-ring filtering: each pass averages every vertex with its neighbors.

    Summation is in ascending vertex-index order (self included at its sorted
    position) so a naive re-implementation reproduces it bitwise.
    """
    vals = np.asarray(values, dtype=np.float64)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    n = len(vals)
    ring = [np.sort(np.append(adjacency[i], i)) for i in range(n)]
    for _ in range(iterations):
        out = np.empty_like(vals)
        for i in range(n):
            out[i] = vals[ring[i]].sum(axis=0) / len(ring[i])
        vals = out
    return vals[:, 0] if squeeze else vals


@dataclass
class SkinningTransfer:
    weights: np.ndarray                # (Vp, J), rows sum to 1
    skeleton: Skeleton
    part_masks: dict[str, np.ndarray]  # feathered body/neck/head masks
    uncovered: int


def transfer_skinning(body: BodyModel, fit: BodyFitResult, proxy: TriMesh,
                      smoothing_iterations: int = 5,
                      max_distance: float = 0.10) -> SkinningTransfer:
    """Copy skinning weights from the fitted body model, smooth, renormalize.

    Nearest-correspondence copy, then exactly `smoothing_iterations` rounds of
    1-ring averaging, then row renormalization. Proxy vertices without a
    nearby body vertex inherit their nearest covered vertex (warning case).
    """
    posed = body.vertices(fit.beta, fit.joint_angles_rad, fit.root)
    tree = cKDTree(posed)
    dist, idx = tree.query(proxy.vertices)
    covered = dist <= max_distance
    uncovered = int((~covered).sum())

    weights = body.skinning[idx].copy()
    if uncovered and covered.any():
        cov_tree = cKDTree(proxy.vertices[covered])
        _, near = cov_tree.query(proxy.vertices[~covered])
        weights[~covered] = weights[np.nonzero(covered)[0][near]]

    adjacency = proxy.vertex_adjacency()
    weights = smooth_vertex_field(weights, adjacency, smoothing_iterations)
    weights = np.maximum(weights, 0.0)
    weights /= weights.sum(axis=1, keepdims=True)

    part_masks = {}
    for j, name in enumerate(PART_NAMES[:weights.shape[1]]):
        part_masks[name] = weights[:, j].copy()
    return SkinningTransfer(weights=weights, skeleton=body.skeleton,
                            part_masks=part_masks, uncovered=uncovered)


# ---------------------------------------------------------------------------
# actor rig

@dataclass
class ActorRig:
    """Fused proxy + transferred blendshapes + skeleton + calibration database."""

    proxy: TriMesh
    blendshapes: np.ndarray                    # (Nd, Vp, 3)
    skeleton: Skeleton
    skinning: np.ndarray                       # (Vp, J)
    region_masks: dict[str, np.ndarray]        # face/eye/mouth + body/neck/head
    model_vertex: np.ndarray                   # (Vp,) proxy -> model vertex or -1
    fit_params: dict                           # fitted face params + metadata
    calib_db: SequenceStore | None = None
    eye_textures: dict[int, np.ndarray] = field(default_factory=dict)
    eye_meta: dict = field(default_factory=dict)

    @property
    def num_expression(self) -> int:
        return self.blendshapes.shape[0]

    def part_orientation(self, part: str, angles_rad: np.ndarray,
                         root: RigidTransform | None = None) -> np.ndarray:
        """World rotation of a named part under the given pose."""
        worlds = self.skeleton.fk(angles_rad, root)
        j = PART_NAMES.index(part)
        return worlds[j].rotation


def refine_tracking(rig_proxy: TriMesh, masks: dict[str, np.ndarray],
                    calib: SequenceStore, cfg: ICPConfig | None = None,
                    mask_threshold: float = 0.5) -> dict[str, list[RigidTransform]]:
    """Re-track the calibration sequence independently for head and body.

    Uses the rig's segmentation masks to pick the model vertices per part;
    per-frame failures are flagged and poses interpolated from neighbors.
    """
    cfg = cfg or ICPConfig()
    normals = rig_proxy.ensure_normals()
    out: dict[str, list[RigidTransform]] = {}
    init_poses = calib.poses or [RigidTransform.identity()] * len(calib)
    for part in ("head", "body"):
        sel = masks[part] > mask_threshold
        pts = rig_proxy.vertices[sel]
        nrm = normals[sel]
        poses: list[RigidTransform | None] = []
        prev = RigidTransform.identity()
        for i, frame in enumerate(calib.frames):
            init = init_poses[i] if calib.poses is not None else prev
            try:
                result = icp_point_to_plane(pts, nrm, frame, init, cfg)
                poses.append(result.pose)
                prev = result.pose
            except Exception:
                poses.append(None)
        # interpolate flagged frames from tracked neighbors
        for i, p in enumerate(poses):
            if p is None:
                left = next((poses[k] for k in range(i - 1, -1, -1) if poses[k] is not None), None)
                right = next((poses[k] for k in range(i + 1, len(poses)) if poses[k] is not None), None)
                poses[i] = left or right or RigidTransform.identity()
        out[part] = poses  # type: ignore[assignment]
    return out


# ---------------------------------------------------------------------------
# rig bundle I/O

def save_rig_bundle(directory, rig: ActorRig) -> None:
    from .sequence import save_sequence

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    attrs = {f"mask_{k}": v for k, v in sorted(rig.region_masks.items())}
    attrs["skin"] = rig.skinning
    attrs["model_vertex"] = rig.model_vertex.astype(np.float64)
    proxy = TriMesh(rig.proxy.vertices, rig.proxy.faces, rig.proxy.ensure_normals(), attrs)
    plyio.save_ply(directory / "proxy.ply", proxy)
    if rig.num_expression:
        imgio.save_pfm(directory / "blendshapes.pfm",
                       rig.blendshapes.reshape(rig.num_expression, -1, 3))
    with open(directory / "skeleton.json", "w") as f:
        json.dump(rig.skeleton.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    with open(directory / "fit.json", "w") as f:
        json.dump(rig.fit_params, f, indent=1, sort_keys=True)
        f.write("\n")
    if rig.calib_db is not None:
        save_sequence(directory / "calib", rig.calib_db)
    if rig.eye_textures:
        eyes = directory / "eyes"
        eyes.mkdir(exist_ok=True)
        for cls, tex in sorted(rig.eye_textures.items()):
            imgio.save_color_png(eyes / f"class_{cls:02d}.png", tex)
        with open(eyes / "meta.json", "w") as f:
            json.dump(rig.eye_meta, f, indent=1, sort_keys=True)
            f.write("\n")


def load_rig_bundle(directory) -> ActorRig:
    from .sequence import load_sequence

    directory = Path(directory)
    proxy_full = plyio.load_ply(directory / "proxy.ply")
    masks = {}
    skinning = None
    model_vertex = None
    attrs = {}
    for name, ch in proxy_full.attributes.items():
        if name.startswith("mask_"):
            masks[name[len("mask_"):]] = ch
        elif name == "skin":
            skinning = ch
        elif name == "model_vertex":
            model_vertex = ch.astype(np.int64)
        else:
            attrs[name] = ch
    proxy = TriMesh(proxy_full.vertices, proxy_full.faces, proxy_full.normals, attrs)

    blend = np.zeros((0, proxy.num_vertices, 3))
    if (directory / "blendshapes.pfm").exists():
        blend = imgio.load_pfm(directory / "blendshapes.pfm").astype(np.float64)
        blend = blend.reshape(-1, proxy.num_vertices, 3)
    with open(directory / "skeleton.json") as f:
        skeleton = Skeleton.from_dict(json.load(f))
    with open(directory / "fit.json") as f:
        fit_params = json.load(f)

    calib = None
    if (directory / "calib" / "meta.json").exists():
        calib = load_sequence(directory / "calib", load_alphas=True)

    eye_textures = {}
    eye_meta = {}
    eyes = directory / "eyes"
    if eyes.is_dir():
        for p in sorted(eyes.glob("class_*.png")):
            cls = int(p.stem.split("_")[1])
            eye_textures[cls] = imgio.load_color_png(p)
        if (eyes / "meta.json").exists():
            with open(eyes / "meta.json") as f:
                eye_meta = json.load(f)

    return ActorRig(proxy=proxy, blendshapes=blend, skeleton=skeleton,
                    skinning=skinning, region_masks=masks,
                    model_vertex=model_vertex, fit_params=fit_params,
                    calib_db=calib, eye_textures=eye_textures, eye_meta=eye_meta)
