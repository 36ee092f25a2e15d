"""Detailed per-vertex albedo recovered from a video frame."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import PreconditionError
from ..face3d.basis import FaceBasis
from ..face3d.model import (Camera, CoefficientSet, assemble_texture, build_mesh, project,
                            rotation_matrix, sh_shading)
from .raster import rasterize

MIN_SHADING = 1e-3


def select_albedo_frame(coeff_seq: Sequence[CoefficientSet]) -> int:
    """Index of the most neutral, most frontal frame (first one on ties)."""
    if len(coeff_seq) == 0:
        raise PreconditionError("no frames to choose from")
    score = [float(c.beta @ c.beta + c.pose[:3] @ c.pose[:3]) for c in coeff_seq]
    return int(np.argmin(score))


def _bilinear(image: np.ndarray, uv: np.ndarray):
    h, w = image.shape[:2]
    x, y = uv[:, 0], uv[:, 1]
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    inside = (x0 >= 0) & (y0 >= 0) & (x0 + 1 < w) & (y0 + 1 < h)
    x0c, y0c = np.clip(x0, 0, w - 2), np.clip(y0, 0, h - 2)
    fx, fy = (x - x0c)[:, None], (y - y0c)[:, None]
    im = image if image.ndim == 3 else image[..., None]
    val = ((1 - fx) * (1 - fy) * im[y0c, x0c] + fx * (1 - fy) * im[y0c, x0c + 1]
           + (1 - fx) * fy * im[y0c + 1, x0c] + fx * fy * im[y0c + 1, x0c + 1])
    return val, inside, (y0c, x0c)


def extract_detailed_albedo(frames: Sequence[np.ndarray], coeff_seq: Sequence[CoefficientSet],
                            camera: Camera, basis: FaceBasis, depth_tol: float = 0.05,
                            min_cos: float = 0.3):
    """Sample pixel colours at projected vertices and divide out the SH shading.

    Uses the frame picked by :func:`select_albedo_frame`.  Vertices that are
    hidden, off-screen or seen at a grazing angle (view cosine below
    ``min_cos``) keep the low-frequency basis albedo.  Returns ``(albedo (V, 3), visible mask (V,), frame index)``.
    """
    if len(frames) == 0 or len(frames) != len(coeff_seq):
        raise PreconditionError("need matching, nonempty frame and coefficient lists")
    k = select_albedo_frame(coeff_seq)
    coeffs = coeff_seq[k]
    frame = np.asarray(frames[k], dtype=np.float64)
    mesh = build_mesh(basis, coeffs)
    low_freq = assemble_texture(basis, coeffs.delta)

    # geometry-only pass for occlusion and coverage
    probe = rasterize(mesh, coeffs.pose, camera, np.r_[np.ones(1), np.zeros(26)])
    uv, depth, in_front = project(mesh.vertices, coeffs.pose, camera)
    uv = np.nan_to_num(uv, nan=-1.0)
    color, inside, (y0, x0) = _bilinear(frame, uv)
    covered = np.ones(len(uv), dtype=bool)
    nearest_depth = np.full(len(uv), np.inf)
    for dy in (0, 1):
        for dx in (0, 1):
            covered &= probe.mask[y0 + dy, x0 + dx] > 0
            nearest_depth = np.minimum(nearest_depth, probe.depth[y0 + dy, x0 + dx])
    visible = in_front & inside & covered & (depth <= nearest_depth + depth_tol)

    r = rotation_matrix(*coeffs.pose[:3])
    normals = mesh.normals @ r.T
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rays = mesh.vertices @ r.T + coeffs.pose[3:] + (0.0, 0.0, camera.distance)
    cos_view = -np.einsum("ij,ij->i", normals, rays) / np.linalg.norm(rays, axis=1)
    visible &= cos_view >= min_cos
    shading = np.maximum(sh_shading(normals, coeffs.gamma), MIN_SHADING)
    albedo = low_freq.copy()
    albedo[visible] = np.clip(color[visible] / shading[visible], 0.0, 1.0)
    return albedo, visible, k
