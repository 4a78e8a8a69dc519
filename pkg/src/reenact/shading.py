"""Real spherical harmonics shading over the first three bands (9 coefficients)."""

from __future__ import annotations

import numpy as np

# band ordering: [1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2]
_C0 = 0.28209479177387814   # 0.5*sqrt(1/pi)
_C1 = 0.4886025119029199    # sqrt(3/(4pi))
_C2 = 1.0925484305920792    # sqrt(15/(4pi))
_C3 = 0.31539156525252005   # 0.25*sqrt(5/pi)
_C4 = 0.5462742152960396    # 0.25*sqrt(15/pi)

NUM_SH = 9


def sh_basis(normals: np.ndarray) -> np.ndarray:
    """Evaluate the 9 SH basis functions at unit directions; (..., 3) -> (..., 9)."""
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (NUM_SH,))
    out[..., 0] = _C0
    out[..., 1] = _C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = _C1 * x
    out[..., 4] = _C2 * x * y
    out[..., 5] = _C2 * y * z
    out[..., 6] = _C3 * (3.0 * z * z - 1.0)
    out[..., 7] = _C2 * x * z
    out[..., 8] = _C4 * (x * x - y * y)
    return out


def sh_basis_gradient(normals: np.ndarray) -> np.ndarray:
    """d(basis)/d(direction) at unit directions; (..., 3) -> (..., 9, 3)."""
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    zero = np.zeros_like(x)
    g = np.empty(n.shape[:-1] + (NUM_SH, 3))
    g[..., 0, :] = 0.0
    g[..., 1, :] = np.stack([zero, np.full_like(x, _C1), zero], axis=-1)
    g[..., 2, :] = np.stack([zero, zero, np.full_like(x, _C1)], axis=-1)
    g[..., 3, :] = np.stack([np.full_like(x, _C1), zero, zero], axis=-1)
    g[..., 4, :] = _C2 * np.stack([y, x, zero], axis=-1)
    g[..., 5, :] = _C2 * np.stack([zero, z, y], axis=-1)
    g[..., 6, :] = _C3 * np.stack([zero, zero, 6.0 * z], axis=-1)
    g[..., 7, :] = _C2 * np.stack([z, zero, x], axis=-1)
    g[..., 8, :] = _C4 * np.stack([2.0 * x, -2.0 * y, zero], axis=-1)
    return g


def shade(albedo: np.ndarray, normals: np.ndarray, sh_coeffs: np.ndarray,
          clip: bool = True) -> np.ndarray:
    """Lambertian SH shading: albedo * (basis(n) @ coeffs) per channel.

    albedo (..., 3), normals (..., 3) unit, sh_coeffs (9, 3). Output clamped
    to [0, 1] unless clip=False (energies need the unclamped value).
    """
    irradiance = sh_basis(normals) @ np.asarray(sh_coeffs, dtype=np.float64)
    color = np.asarray(albedo, dtype=np.float64) * irradiance
    return np.clip(color, 0.0, 1.0) if clip else color


def default_lighting() -> np.ndarray:
    """Mild, slightly warm front-lit illumination (9 x 3 SH coefficients)."""
    gamma = np.zeros((NUM_SH, 3))
    gamma[0] = [2.70, 2.62, 2.55]     # ambient
    gamma[2] = [-0.45, -0.45, -0.45]  # z band: camera looks +z, surfaces face -z
    gamma[1] = [-0.12, -0.12, -0.10]  # slight top light (y is down)
    gamma[3] = [0.08, 0.08, 0.08]
    return gamma
