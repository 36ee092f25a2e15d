"""Time the compiled and numpy triangle rasterizers on the same projected face mesh.

    python benchmarks/bench_raster.py [--sizes 64 128 256] [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from talkinghead.face3d import Camera, CoefficientSet, build_mesh, project, synthetic_basis
from talkinghead.render import _kernels_py
from talkinghead.render.raster import shade_vertices

try:
    from talkinghead.render import _kernels
except ImportError:
    _kernels = None


def scene(size: int, seed: int = 0):
    basis = synthetic_basis(seed=seed)
    rng = np.random.default_rng(seed)
    d_id, d_exp, d_tex = basis.dims
    gamma = np.tile(np.r_[3.0, 0, -0.6, 0, 0, 0, 0, 0, 0], 3)
    pose = np.r_[0.1, 0.3, 0.05, 0.0, 0.0, 0.0]
    coeffs = CoefficientSet(rng.normal(size=d_id) * 0.5, rng.normal(size=d_exp) * 0.3,
                            rng.normal(size=d_tex) * 0.5, gamma, pose)
    mesh = build_mesh(basis, coeffs)
    uv, depth, _ = project(mesh.vertices, pose, Camera.for_image(size))
    colors = shade_vertices(mesh, pose, gamma)
    c = np.ascontiguousarray
    return c(uv), c(depth), c(colors), c(mesh.triangles, dtype=np.int64)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = [("python", _kernels_py.rasterize_triangles)]
    if _kernels is not None:
        backends.insert(0, ("cython", _kernels.rasterize_triangles))
    else:
        print("compiled kernel not built; timing the numpy fallback only")
    print(f"{'size':>6} " + " ".join(f"{name + ' ms':>12}" for name, _ in backends) + f" {'speedup':>9}")
    for size in args.sizes:
        uv, depth, colors, tris = scene(size)
        times = []
        outputs = []
        for _, fn in backends:
            call = lambda: fn(uv, depth, colors, tris, size, size)  # noqa: E731
            outputs.append(call())
            times.append(min(timeit.repeat(call, number=1, repeat=args.repeat)) * 1e3)
        if len(outputs) == 2:
            same = all(np.array_equal(a, b) for a, b in zip(outputs[0], outputs[1]))
            assert same, "backends disagree"
        speed = f"{times[-1] / times[0]:9.1f}x" if len(times) == 2 else f"{'-':>9}"
        print(f"{size:>6} " + " ".join(f"{t:12.2f}" for t in times) + f" {speed}")


if __name__ == "__main__":
    main()
