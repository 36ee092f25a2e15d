"""Linear face bases: synthetic generator, container I/O and OBJ export."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import container
from ..errors import ConfigurationError


@dataclass
class FaceBasis:
    mean_shape: np.ndarray      # (3V,) xyz interleaved per vertex
    mean_texture: np.ndarray    # (3V,) rgb in [0, 1]
    id_basis: np.ndarray        # (3V, D_id)
    exp_basis: np.ndarray       # (3V, D_exp)
    tex_basis: np.ndarray       # (3V, D_tex)
    triangles: np.ndarray       # (F, 3) int
    landmark_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mouth_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float64).ravel()
        self.mean_texture = np.asarray(self.mean_texture, dtype=np.float64).ravel()
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.landmark_indices = np.asarray(self.landmark_indices, dtype=np.int64)
        self.mouth_indices = np.asarray(self.mouth_indices, dtype=np.int64)
        n = self.mean_shape.size
        if n % 3:
            raise ConfigurationError("mean shape length must be a multiple of 3")
        if self.mean_texture.size != n:
            raise ConfigurationError("mean texture and mean shape differ in length")
        for name in ("id_basis", "exp_basis", "tex_basis"):
            b = np.asarray(getattr(self, name), dtype=np.float64)
            if b.ndim != 2 or b.shape[0] != n:
                raise ConfigurationError(f"{name} must have {n} rows, got {b.shape}")
            setattr(self, name, b)
        v = self.n_vertices
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= v):
            raise ConfigurationError("triangle list indexes a missing vertex")
        for name in ("landmark_indices", "mouth_indices"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= v):
                raise ConfigurationError(f"{name} out of range")

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.size // 3

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.id_basis.shape[1], self.exp_basis.shape[1], self.tex_basis.shape[1]


def icosphere(subdivisions: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere; triangles wound counter-clockwise seen from outside.

    ``subdivisions=3`` gives 642 vertices and 1280 faces.
    """
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), np.array(faces, dtype=np.int64)


def subdivisions_for(n_vertices: int) -> int:
    # icosphere vertex count is 10 * 4**k + 2
    for k in range(8):
        if 10 * 4 ** k + 2 == n_vertices:
            return k
    raise ConfigurationError(f"{n_vertices} is not an icosphere vertex count (10*4^k+2)")


def graph_laplacian(n: int, triangles: np.ndarray) -> np.ndarray:
    adj = np.zeros((n, n))
    for a, b, c in triangles:
        adj[a, b] = adj[b, a] = adj[b, c] = adj[c, b] = adj[a, c] = adj[c, a] = 1.0
    return np.diag(adj.sum(1)) - adj


def _smooth_orthonormal(fields: np.ndarray, smoother: np.ndarray, weight: np.ndarray | None) -> np.ndarray:
    # fields: (V, 3, D) random; smooth over the mesh graph, then orthonormalize columns
    v, _, d = fields.shape
    sm = np.einsum("uv,vcd->ucd", smoother, fields)
    if weight is not None:
        sm = sm * weight[:, None, None]
    q, r = np.linalg.qr(sm.reshape(3 * v, d))
    # fix the sign ambiguity of QR so the basis is reproducible
    return q * np.sign(np.diag(r))[None, :]


def _spread_indices(points: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Greedy farthest-point subset of ``candidates``; deterministic."""
    k = min(k, candidates.size)
    chosen = [int(candidates[np.argmin(points[candidates, 2])])]
    dist = np.linalg.norm(points[candidates] - points[chosen[0]], axis=1)
    while len(chosen) < k:
        nxt = int(candidates[np.argmax(dist)])
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points[candidates] - points[nxt], axis=1))
    return np.sort(np.array(chosen, dtype=np.int64))


def synthetic_basis(n_vertices: int = 642, d_id: int = 8, d_exp: int = 6, d_tex: int = 8,
                    seed: int = 0, smoothing_steps: int = 40, n_landmarks: int = 68) -> FaceBasis:
    """Sphere "head" with smooth random orthonormal identity/expression/texture modes.

    Model axes: x right, y down, z away from the camera, so the face looks
    toward -z.  Expression modes are weighted toward the front of the head.
    """
    verts, tris = icosphere(subdivisions_for(n_vertices))
    v = verts.shape[0]
    rng = np.random.default_rng(seed)
    lap = graph_laplacian(v, tris)
    step = np.eye(v) - 0.5 * lap / lap.diagonal().max()
    smoother = np.linalg.matrix_power(step, smoothing_steps)

    front = np.clip(-verts[:, 2], 0.0, None)
    id_basis = _smooth_orthonormal(rng.standard_normal((v, 3, d_id)), smoother, None)
    exp_basis = _smooth_orthonormal(rng.standard_normal((v, 3, d_exp)), smoother, 0.2 + front)
    tex_basis = _smooth_orthonormal(rng.standard_normal((v, 3, d_tex)), smoother, None)

    skin = np.array([0.78, 0.60, 0.50])
    shade = smoother @ rng.standard_normal(v)
    shade = 0.08 * shade / (np.abs(shade).max() + 1e-12)
    mean_tex = np.clip(skin[None, :] + shade[:, None], 0.05, 0.95)

    front_idx = np.flatnonzero(verts[:, 2] < -0.3)
    landmarks = _spread_indices(verts, front_idx, n_landmarks)
    mouth = np.flatnonzero((verts[:, 2] < -0.6) & (verts[:, 1] > 0.25) & (np.abs(verts[:, 0]) < 0.5))
    return FaceBasis(verts.ravel(), mean_tex.ravel(), id_basis, exp_basis, tex_basis,
                     tris, landmarks, mouth)


def save_basis(path: str | Path, basis: FaceBasis) -> None:
    d_id, d_exp, d_tex = basis.dims
    meta = {"kind": "face_basis", "d_id": d_id, "d_exp": d_exp, "d_tex": d_tex,
            "n_vertices": basis.n_vertices, "n_triangles": int(basis.triangles.shape[0])}
    container.save(path, {
        "mean_shape": basis.mean_shape,
        "mean_texture": basis.mean_texture,
        "id_basis": basis.id_basis,
        "exp_basis": basis.exp_basis,
        "tex_basis": basis.tex_basis,
        "triangles": basis.triangles,
        "landmark_indices": basis.landmark_indices,
        "mouth_indices": basis.mouth_indices,
    }, meta)


def load_basis(path: str | Path) -> FaceBasis:
    """Load a basis container, including externally converted full-size ones."""
    arrays, meta = container.load(path)
    missing = {"mean_shape", "mean_texture", "id_basis", "exp_basis", "tex_basis", "triangles"} - arrays.keys()
    if missing:
        raise ConfigurationError(f"basis file lacks arrays: {sorted(missing)}")
    basis = FaceBasis(arrays["mean_shape"], arrays["mean_texture"], arrays["id_basis"],
                      arrays["exp_basis"], arrays["tex_basis"], arrays["triangles"],
                      arrays.get("landmark_indices", np.zeros(0, np.int64)),
                      arrays.get("mouth_indices", np.zeros(0, np.int64)))
    declared = tuple(meta.get(k) for k in ("d_id", "d_exp", "d_tex"))
    if None not in declared and declared != basis.dims:
        raise ConfigurationError(f"header dims {declared} disagree with arrays {basis.dims}")
    return basis


def export_obj(path: str | Path, vertices: np.ndarray, triangles: np.ndarray,
               colors: np.ndarray | None = None) -> None:
    """ASCII OBJ; per-vertex colours go in ``#vc r g b`` comment lines."""
    lines = []
    for i, p in enumerate(np.asarray(vertices).reshape(-1, 3)):
        lines.append(f"v {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}")
        if colors is not None:
            c = np.asarray(colors).reshape(-1, 3)[i]
            lines.append(f"#vc {c[0]:.6f} {c[1]:.6f} {c[2]:.6f}")
    for a, b, c in np.asarray(triangles).reshape(-1, 3) + 1:
        lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")
