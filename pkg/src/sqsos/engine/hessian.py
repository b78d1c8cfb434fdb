"""Hessian approximations: damped BFGS and regularised exact Hessians."""

from __future__ import annotations

import numpy as np

from .config import DAMPED_BFGS, EXACT_GERSHGORIN, EXACT_MIN_FROBENIUS, EXACT_MIRRORED

MIN_EIG = 1e-8
DEGENERATE_STEP = 1e-14
POWELL = 0.2


def damped_bfgs(B: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Powell-damped BFGS update; keeps ``B`` positive definite."""
    if np.linalg.norm(s) < DEGENERATE_STEP:
        return B
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 0:
        return B
    sy = float(s @ y)
    if sy >= POWELL * sBs:
        theta = 1.0
    else:
        theta = (1 - POWELL) * sBs / (sBs - sy)
    r = theta * y + (1 - theta) * Bs
    out = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / float(s @ r)
    return 0.5 * (out + out.T)


def gershgorin_shift(H: np.ndarray) -> float:
    radii = np.abs(H).sum(axis=1) - np.abs(np.diag(H))
    return max(0.0, -float(np.min(np.diag(H) - radii)))


def regularize(H: np.ndarray, mode: str) -> np.ndarray:
    """Symmetric matrix with min eigenvalue at least ``MIN_EIG`` close to ``H``."""
    H = 0.5 * (H + H.T)
    if mode == EXACT_GERSHGORIN:
        return H + (gershgorin_shift(H) + MIN_EIG) * np.eye(H.shape[0])
    w, V = np.linalg.eigh(H)
    if mode == EXACT_MIRRORED:
        w = np.maximum(np.abs(w), MIN_EIG)
    elif mode == EXACT_MIN_FROBENIUS:
        w = np.maximum(w, MIN_EIG)
    else:
        raise ValueError(f"no regularisation for mode {mode!r}")
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def initial_hessian(n: int, mode: str, scale: float, exact: np.ndarray | None = None) -> np.ndarray:
    if mode == DAMPED_BFGS or exact is None:
        return scale * np.eye(n)
    return regularize(exact, mode)
