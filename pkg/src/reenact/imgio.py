"""Image file I/O: 8-bit PNG for color, 16-bit millimeter PNG for depth, PFM for floats."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image


def save_color_png(path, image: np.ndarray) -> None:
    """Save an (H, W, 3) float image in [0, 1] as RGB8 PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(str(path), format="PNG")


def load_color_png(path) -> np.ndarray:
    """Load an RGB PNG as (H, W, 3) float32 in [0, 1]."""
    img = Image.open(str(path)).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


def save_depth_png(path, depth_m: np.ndarray) -> None:
    """Save a depth map in meters as 16-bit millimeter PNG; 0 stays invalid."""
    mm = np.round(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(str(path), format="PNG")


def load_depth_png(path) -> np.ndarray:
    """Load a 16-bit millimeter PNG as a float32 depth map in meters."""
    img = Image.open(str(path))
    arr = np.asarray(img)
    if arr.dtype != np.uint16:
        arr = arr.astype(np.uint16)
    return arr.astype(np.float32) / 1000.0


def save_gray_png(path, image: np.ndarray) -> None:
    """Save an (H, W) float image in [0, 1] as 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(str(path), format="PNG")


def load_gray_png(path) -> np.ndarray:
    img = Image.open(str(path)).convert("L")
    return np.asarray(img, dtype=np.float32) / 255.0


def save_pfm(path, data: np.ndarray) -> None:
    """Save (H, W) or (H, W, 3) float32 data as a little-endian PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
        rows = data
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
        rows = data
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3), got {data.shape}")
    h, w = rows.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale = little endian
        # PFM stores rows bottom-up
        f.write(np.ascontiguousarray(rows[::-1]).tobytes())


def load_pfm(path) -> np.ndarray:
    """Load a PFM file as float32, (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: {path}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * (3 if magic == b"PF" else 1)
        buf = f.read(count * 4)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype).astype(np.float32)
    if magic == b"PF":
        data = data.reshape(h, w, 3)
    else:
        data = data.reshape(h, w)
    return data[::-1].copy()


def save_binary_mask_png(path, mask: np.ndarray) -> None:
    """Save a boolean or {0,1} float mask as an 8-bit PNG (0 or 255)."""
    data = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    Image.fromarray(data, mode="L").save(str(path), format="PNG")


def load_mask_png(path) -> np.ndarray:
    """Load an 8-bit mask PNG as float32 in [0, 1]."""
    return load_gray_png(path)
