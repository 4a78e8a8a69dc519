"""RGB-D frame and sequence containers plus on-disk sequence format.

A sequence directory holds color_%05d.png (RGB8), depth_%05d.png (16-bit
millimeters), optional alpha_%05d.png masks, an optional background.png, and
meta.json with intrinsics, optional poses (row-major 4x4), landmark tracks and
per-frame flags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .camera import CameraIntrinsics
from .geometry import RigidTransform


@dataclass
class RGBDFrame:
    """Registered color + depth pair. color (H, W, 3) in [0, 1]; depth meters, 0 invalid."""

    color: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    time_index: int = 0

    def __post_init__(self):
        H, W = self.depth.shape
        if (H, W) != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("depth size does not match intrinsics")
        if self.color.shape[:2] != (H, W):
            raise ValueError("color size does not match depth")
        if not np.isfinite(self.depth).all() or (self.depth < 0).any():
            raise ValueError("depth must be finite and non-negative")

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0


@dataclass
class LandmarkTrack:
    """Named 2D landmarks per frame; NaN rows mark unobserved landmarks."""

    names: list[str]
    points: np.ndarray  # (T, L, 2) float, NaN where unobserved

    def frame(self, t: int) -> dict[str, np.ndarray]:
        """Visible landmarks of frame t as name -> (2,) pixel."""
        out = {}
        for i, name in enumerate(self.names):
            p = self.points[t, i]
            if np.isfinite(p).all():
                out[name] = p.copy()
        return out


@dataclass
class SequenceStore:
    """Ordered frames with optional poses, landmarks and background image."""

    frames: list[RGBDFrame]
    poses: list[RigidTransform] | None = None
    landmarks: LandmarkTrack | None = None
    background_image: np.ndarray | None = None
    eye_closed: np.ndarray | None = None          # (T,) bool
    part_poses: dict[str, list[RigidTransform]] = field(default_factory=dict)
    alphas: list[np.ndarray] | None = None
    extra_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.poses is not None and len(self.poses) != len(self.frames):
            raise ValueError("pose count does not match frame count")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.frames[0].intrinsics


def _pose_list_to_json(poses: list[RigidTransform]) -> list:
    return [p.matrix().reshape(-1).tolist() for p in poses]


def _pose_list_from_json(rows: list) -> list[RigidTransform]:
    return [RigidTransform.from_matrix(np.asarray(r, dtype=np.float64).reshape(4, 4))
            for r in rows]


def save_sequence(directory, seq: SequenceStore) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(seq.frames):
        imgio.save_color_png(directory / f"color_{i:05d}.png", fr.color)
        imgio.save_depth_png(directory / f"depth_{i:05d}.png", fr.depth)
    if seq.alphas is not None:
        for i, a in enumerate(seq.alphas):
            imgio.save_gray_png(directory / f"alpha_{i:05d}.png", a)
    if seq.background_image is not None:
        imgio.save_color_png(directory / "background.png", seq.background_image)

    meta: dict = {
        "intrinsics": seq.intrinsics.to_dict(),
        "frame_count": len(seq.frames),
    }
    if seq.poses is not None:
        meta["poses"] = _pose_list_to_json(seq.poses)
    for part, poses in seq.part_poses.items():
        meta[f"poses_{part}"] = _pose_list_to_json(poses)
    if seq.landmarks is not None:
        pts = np.where(np.isfinite(seq.landmarks.points), seq.landmarks.points, None)
        meta["landmarks"] = {
            "names": seq.landmarks.names,
            "points": [[None if row[0] is None else [float(row[0]), float(row[1])]
                        for row in frame] for frame in pts.tolist()],
        }
    if seq.eye_closed is not None:
        meta["eye_closed"] = [bool(b) for b in seq.eye_closed]
    meta.update(seq.extra_meta)
    with open(directory / "meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")


def load_sequence(directory, load_alphas: bool = False) -> SequenceStore:
    directory = Path(directory)
    with open(directory / "meta.json") as f:
        meta = json.load(f)
    K = CameraIntrinsics.from_dict(meta["intrinsics"])
    count = int(meta["frame_count"])

    frames = []
    for i in range(count):
        color = imgio.load_color_png(directory / f"color_{i:05d}.png")
        depth = imgio.load_depth_png(directory / f"depth_{i:05d}.png")
        frames.append(RGBDFrame(color=color, depth=depth, intrinsics=K, time_index=i))

    poses = _pose_list_from_json(meta["poses"]) if "poses" in meta else None
    part_poses = {}
    for key in meta:
        if key.startswith("poses_"):
            part_poses[key[len("poses_"):]] = _pose_list_from_json(meta[key])

    landmarks = None
    if "landmarks" in meta:
        names = meta["landmarks"]["names"]
        raw = meta["landmarks"]["points"]
        pts = np.full((count, len(names), 2), np.nan)
        for t, frame in enumerate(raw):
            for i, p in enumerate(frame):
                if p is not None:
                    pts[t, i] = p
        landmarks = LandmarkTrack(names=names, points=pts)

    background = None
    if (directory / "background.png").exists():
        background = imgio.load_color_png(directory / "background.png")

    eye_closed = None
    if "eye_closed" in meta:
        eye_closed = np.asarray(meta["eye_closed"], dtype=bool)

    alphas = None
    if load_alphas and (directory / "alpha_00000.png").exists():
        alphas = [imgio.load_mask_png(directory / f"alpha_{i:05d}.png") for i in range(count)]

    known = {"intrinsics", "frame_count", "poses", "landmarks", "eye_closed"}
    extra = {k: v for k, v in meta.items()
             if k not in known and not k.startswith("poses_")}
    return SequenceStore(frames=frames, poses=poses, landmarks=landmarks,
                         background_image=background, eye_closed=eye_closed,
                         part_poses=part_poses, alphas=alphas, extra_meta=extra)
