"""Shape/texture assembly, SH shading and perspective projection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ValidationError
from .basis import FaceBasis

SH_BANDS = 3
N_SH = SH_BANDS ** 2
POSE_DIM = 6

# real SH normalisation constants, no Condon-Shortley phase
_C0 = 0.5 / np.sqrt(np.pi)
_C1 = np.sqrt(3.0 / (4.0 * np.pi))
_C2 = 0.5 * np.sqrt(15.0 / np.pi)
_C20 = 0.25 * np.sqrt(5.0 / np.pi)
_C22 = 0.25 * np.sqrt(15.0 / np.pi)
SH_CONSTANT = _C0


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass
class CoefficientSet:
    """One frame's coefficients: identity, expression, texture, lighting, pose.

    ``gamma`` holds 9 SH weights per colour channel (R block, then G, then B).
    ``pose`` is (pitch, yaw, roll, tx, ty, tz), angles in radians.
    """

    alpha: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(3 * N_SH))
    pose: np.ndarray = field(default_factory=lambda: np.zeros(POSE_DIM))

    def __post_init__(self):
        for name in ("alpha", "beta", "delta", "gamma", "pose"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        if self.gamma.size != 3 * N_SH:
            raise ConfigurationError(f"gamma must have {3 * N_SH} entries")
        if self.pose.size != POSE_DIM:
            raise ConfigurationError("pose must have 6 entries")
        self.pose = self.pose.copy()
        self.pose[:3] = wrap_angle(self.pose[:3])

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.alpha.size, self.beta.size, self.delta.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.delta, self.gamma, self.pose])

    @classmethod
    def from_vector(cls, vec, d_id: int, d_exp: int, d_tex: int) -> "CoefficientSet":
        vec = np.asarray(vec, dtype=np.float64).ravel()
        total = d_id + d_exp + d_tex + 3 * N_SH + POSE_DIM
        if vec.size != total:
            raise ConfigurationError(f"expected {total} coefficients, got {vec.size}")
        cuts = np.cumsum([d_id, d_exp, d_tex, 3 * N_SH])
        a, b, d, g, p = np.split(vec, cuts)
        return cls(a, b, d, g, p)

    @classmethod
    def zeros(cls, d_id: int, d_exp: int, d_tex: int) -> "CoefficientSet":
        return cls(np.zeros(d_id), np.zeros(d_exp), np.zeros(d_tex))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking down +z; the head sits ``distance`` units ahead."""

    focal: float
    cx: float
    cy: float
    width: int
    height: int
    distance: float = 10.0

    def __post_init__(self):
        if not self.focal > 0:
            raise ConfigurationError("focal length must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ConfigurationError("principal point outside the image")
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("image size must be positive")

    @classmethod
    def for_image(cls, size: int, fill: float = 0.8, distance: float = 10.0) -> "Camera":
        """Camera framing a unit-radius head to ``fill`` of the image width."""
        focal = fill * size / 2.0 * distance
        c = (size - 1) / 2.0
        return cls(focal, c, c, size, size, distance)


@dataclass
class FaceMesh:
    vertices: np.ndarray   # (V, 3)
    albedo: np.ndarray     # (V, 3) in [0, 1]
    normals: np.ndarray    # (V, 3) unit
    triangles: np.ndarray  # (F, 3)


def _check_dim(coeffs, basis_matrix, name):
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    if coeffs.size != basis_matrix.shape[1]:
        raise ConfigurationError(f"{name} has {coeffs.size} entries, basis expects {basis_matrix.shape[1]}")
    return coeffs


def assemble_shape(basis: FaceBasis, alpha, beta) -> np.ndarray:
    alpha = _check_dim(alpha, basis.id_basis, "alpha")
    beta = _check_dim(beta, basis.exp_basis, "beta")
    s = basis.mean_shape + basis.id_basis @ alpha + basis.exp_basis @ beta
    return s.reshape(-1, 3)


def assemble_texture(basis: FaceBasis, delta) -> np.ndarray:
    delta = _check_dim(delta, basis.tex_basis, "delta")
    t = basis.mean_texture + basis.tex_basis @ delta
    return np.clip(t, 0.0, 1.0).reshape(-1, 3)


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals, outward for counter-clockwise winding."""
    v = np.asarray(vertices, dtype=np.float64)
    a, b, c = (v[triangles[:, k]] for k in range(3))
    fn = np.cross(b - a, c - a)
    n = np.zeros_like(v)
    for k in range(3):
        np.add.at(n, triangles[:, k], fn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    lonely = norm[:, 0] < 1e-12
    n[lonely] = (0.0, 0.0, -1.0)
    norm[lonely] = 1.0
    return n / norm


def build_mesh(basis: FaceBasis, coeffs: CoefficientSet, albedo: np.ndarray | None = None) -> FaceMesh:
    verts = assemble_shape(basis, coeffs.alpha, coeffs.beta)
    tex = assemble_texture(basis, coeffs.delta) if albedo is None else np.clip(albedo, 0.0, 1.0)
    return FaceMesh(verts, tex, vertex_normals(verts, basis.triangles), basis.triangles)


def sh_basis(normals: np.ndarray) -> np.ndarray:
    """Nine real SH functions of unit normals, (N, 9), (l, m) lexicographic."""
    n = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    return np.stack([
        np.full_like(x, _C0),
        _C1 * y, _C1 * z, _C1 * x,
        _C2 * x * y, _C2 * y * z, _C20 * (3 * z * z - 1), _C2 * x * z, _C22 * (x * x - y * y),
    ], axis=1)


def sh_shading(normals: np.ndarray, gamma) -> np.ndarray:
    """Per-channel SH sum (N, 3), i.e. the radiosity of a white surface."""
    gamma = np.asarray(gamma, dtype=np.float64).reshape(3, N_SH)
    return sh_basis(normals) @ gamma.T


def sh_irradiance(normal, albedo, gamma, tol: float = 1e-4) -> np.ndarray:
    """Lambertian SH radiosity ``albedo * sum_b gamma_b Phi_b(normal)`` per channel.

    Accepts single vectors or (N, 3) stacks.
    """
    normal = np.asarray(normal, dtype=np.float64)
    single = normal.ndim == 1
    n = np.atleast_2d(normal)
    if np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > tol):
        raise ValidationError("normals must be unit length")
    out = np.atleast_2d(np.asarray(albedo, dtype=np.float64)) * sh_shading(n, gamma)
    return out[0] if single else out


def rotation_matrix(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Rz(roll) @ Rx(pitch) @ Ry(yaw); yaw turns about the vertical (y) axis."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cr, sr = np.cos(roll), np.sin(roll)
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rz @ rx @ ry


def to_camera(vertices: np.ndarray, pose, camera: Camera) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    r = rotation_matrix(*pose[:3])
    return np.asarray(vertices, dtype=np.float64) @ r.T + pose[3:] + (0.0, 0.0, camera.distance)


def project(vertices: np.ndarray, pose, camera: Camera) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel coordinates (N, 2), depth (N,) and a visibility flag (depth > 0)."""
    pc = to_camera(vertices, pose, camera)
    depth = pc[:, 2]
    visible = depth > 0
    safe = np.where(visible, depth, 1.0)
    uv = np.stack([camera.focal * pc[:, 0] / safe + camera.cx,
                   camera.focal * pc[:, 1] / safe + camera.cy], axis=1)
    uv[~visible] = np.nan
    return uv, depth, visible
