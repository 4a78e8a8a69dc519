"""Shared Levenberg-Marquardt loop over stacked residual blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class LMConfig:
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e10
    max_iterations: int = 30
    step_eps: float = 1e-7


@dataclass
class LMState:
    x: np.ndarray
    energy: float
    converged: bool
    iterations: int
    accepted_energies: list[float] = field(default_factory=list)


def lm_minimize(residual_fn: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                x0: np.ndarray, cfg: LMConfig | None = None) -> LMState:
    """Minimize ||r(x)||^2 with Marquardt-scaled damping.

    residual_fn(x) -> (r, J). A step is accepted only if it strictly reduces
    the energy, so accepted energies are strictly decreasing.
    """
    cfg = cfg or LMConfig()
    x = np.asarray(x0, dtype=np.float64).copy()
    r, J = residual_fn(x)
    energy = float(r @ r)
    lam = cfg.lambda_init
    accepted = [energy]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        JtJ = J.T @ J
        g = J.T @ r
        D = np.diag(np.maximum(np.diag(JtJ), 1e-12))
        stepped = False
        while lam <= cfg.lambda_max:
            try:
                dx = np.linalg.solve(JtJ + lam * D, -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                continue
            r_new, J_new = residual_fn(x + dx)
            e_new = float(r_new @ r_new)
            if e_new < energy:
                x = x + dx
                r, J, energy = r_new, J_new, e_new
                accepted.append(energy)
                lam = max(lam / cfg.lambda_down, 1e-12)
                stepped = True
                break
            lam *= cfg.lambda_up
        if not stepped:
            converged = True
            break
        if np.linalg.norm(dx) < cfg.step_eps:
            converged = True
            break
    return LMState(x=x, energy=energy, converged=converged, iterations=it,
                   accepted_energies=accepted)


def numeric_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                     eps: float = 1e-6) -> np.ndarray:
    """Forward-difference Jacobian of a vector-valued function."""
    r0 = fn(x)
    J = np.zeros((len(r0), len(x)))
    for k in range(len(x)):
        xk = x.copy()
        xk[k] += eps
        J[:, k] = (fn(xk) - r0) / eps
    return J
