from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..face3d.model import Camera, FaceMesh, project, rotation_matrix, sh_irradiance
from . import _backend


@dataclass
class RenderedFrame:
    image: np.ndarray      # (H, W, 3) in [0, 1]
    mask: np.ndarray       # (H, W) uint8, 1 where a triangle covers the pixel
    pose: np.ndarray       # (6,)
    depth: np.ndarray      # (H, W), inf off the face
    triangle_ids: np.ndarray  # (H, W), -1 off the face


def shade_vertices(mesh: FaceMesh, pose, gamma) -> np.ndarray:
    """Per-vertex radiosity with normals rotated into camera space."""
    r = rotation_matrix(*np.asarray(pose, dtype=np.float64)[:3])
    normals = mesh.normals @ r.T
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return np.clip(sh_irradiance(normals, mesh.albedo, gamma), 0.0, 1.0)


def rasterize_colors(vertices, colors, triangles, pose, camera: Camera):
    uv, depth, _ = project(vertices, pose, camera)
    return _backend.rasterize_triangles(
        np.ascontiguousarray(uv), np.ascontiguousarray(depth),
        np.ascontiguousarray(colors, dtype=np.float64),
        np.ascontiguousarray(triangles, dtype=np.int64), camera.height, camera.width)


def rasterize(mesh: FaceMesh, pose, camera: Camera, gamma) -> RenderedFrame:
    """Render a shaded mesh; Gouraud-interpolated SH radiosity, nearest depth wins."""
    pose = np.asarray(pose, dtype=np.float64)
    colors = shade_vertices(mesh, pose, gamma)
    image, zbuf, tid = rasterize_colors(mesh.vertices, colors, mesh.triangles, pose, camera)
    mask = (tid >= 0).astype(np.uint8)
    if not mask.any():
        warnings.warn("face is entirely off-screen; empty mask")
    return RenderedFrame(np.clip(image, 0.0, 1.0), mask, pose.copy(), zbuf, tid)
