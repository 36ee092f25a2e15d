"""Landmark-based least-squares fitting of pose, identity and expression."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..errors import PreconditionError
from .basis import FaceBasis
from .model import Camera, CoefficientSet, project, wrap_angle

MIN_LANDMARKS = 6


@dataclass
class FitResult:
    coeffs: CoefficientSet
    rmse: float            # reprojection RMSE in pixels
    iterations: int
    converged: bool


def fit_to_landmarks(landmarks2d: np.ndarray, basis: FaceBasis, camera: Camera,
                     landmark_indices: np.ndarray | None = None,
                     reg_shape: float = 1e-3, reg_tex: float = 1e-2,
                     max_iter: int = 10, tol: float = 1e-8) -> FitResult:
    """Fit pose, alpha and beta to 2D landmarks by alternating updates.

    Each round solves pose with the shape frozen, then the shape
    coefficients with the pose frozen (ridge ``reg_shape`` on both).  A
    final joint pass polishes all unknowns together.  Texture and lighting
    cannot be observed from landmarks and come back as zeros; ``reg_tex``
    is kept for signature parity with photometric fitting.
    """
    lm = np.asarray(landmarks2d, dtype=np.float64).reshape(-1, 2)
    idx = basis.landmark_indices if landmark_indices is None else np.asarray(landmark_indices)
    if lm.shape[0] < MIN_LANDMARKS or idx.size < MIN_LANDMARKS:
        raise PreconditionError(f"need at least {MIN_LANDMARKS} landmarks, got {lm.shape[0]}")
    if idx.size != lm.shape[0]:
        raise PreconditionError("landmark count does not match landmark indices")
    d_id, d_exp, d_tex = basis.dims
    mean = basis.mean_shape.reshape(-1, 3)[idx]
    rows = (3 * idx[:, None] + np.arange(3)[None, :]).ravel()
    b_id = basis.id_basis[rows]
    b_exp = basis.exp_basis[rows]
    sqrt_reg = np.sqrt(reg_shape)

    def shape_of(ab):
        return mean + (b_id @ ab[:d_id] + b_exp @ ab[d_id:]).reshape(-1, 3)

    def reproj(pose, ab):
        uv, _, vis = project(shape_of(ab), pose, camera)
        uv = np.where(vis[:, None], uv, 1e6)
        return (uv - lm).ravel()

    pose = np.zeros(6)
    ab = np.zeros(d_id + d_exp)
    prev = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pose = least_squares(lambda p: reproj(p, ab), pose, method="lm").x
        ab = least_squares(lambda c: np.concatenate([reproj(pose, c), sqrt_reg * c]), ab, method="lm").x
        cost = float(np.sum(reproj(pose, ab) ** 2) + reg_shape * ab @ ab)
        if np.isfinite(prev) and prev - cost <= tol * max(1.0, prev):
            converged = True
            break
        prev = cost

    def joint(x):
        return np.concatenate([reproj(x[:6], x[6:]), sqrt_reg * x[6:]])

    polish = least_squares(joint, np.concatenate([pose, ab]), method="lm",
                           xtol=1e-15, ftol=1e-15, gtol=1e-15)
    converged = converged or bool(polish.success)
    pose, ab = polish.x[:6], polish.x[6:]
    res = reproj(pose, ab).reshape(-1, 2)
    rmse = float(np.sqrt(np.mean(np.sum(res ** 2, axis=1))))
    if not converged:
        warnings.warn(f"landmark fit did not settle in {max_iter} rounds; returning best estimate")
    pose = pose.copy()
    pose[:3] = wrap_angle(pose[:3])
    coeffs = CoefficientSet(ab[:d_id], ab[d_id:], np.zeros(d_tex), pose=pose)
    return FitResult(coeffs, rmse, it, converged)
