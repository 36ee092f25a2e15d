# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Z-buffered barycentric triangle rasterizer (compiled backend).

Must stay numerically in step with ``_kernels_py.rasterize_triangles``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, fabs, isfinite, INFINITY

cnp.import_array()

cdef double INSIDE_EPS = 1e-9


def rasterize_triangles(const double[:, ::1] uv, const double[::1] depth,
                        const double[:, ::1] colors, const long long[:, ::1] tris,
                        int height, int width):
    cdef Py_ssize_t n_ch = colors.shape[1]
    image_np = np.zeros((height, width, n_ch), dtype=np.float64)
    zbuf_np = np.full((height, width), np.inf, dtype=np.float64)
    tid_np = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, :, ::1] image = image_np
    cdef double[:, ::1] zbuf = zbuf_np
    cdef long long[:, ::1] tid = tid_np

    cdef Py_ssize_t f, k, ch
    cdef long long a, b, c
    cdef int i, j, x0, x1, y0, y1
    cdef double ax, ay, bx, by, cx, cy, area, inv_area
    cdef double w0, w1, w2, px, py, z

    with nogil:
        for f in range(tris.shape[0]):
            a = tris[f, 0]
            b = tris[f, 1]
            c = tris[f, 2]
            if depth[a] <= 0 or depth[b] <= 0 or depth[c] <= 0:
                continue
            ax = uv[a, 0]; ay = uv[a, 1]
            bx = uv[b, 0]; by = uv[b, 1]
            cx = uv[c, 0]; cy = uv[c, 1]
            if not (isfinite(ax) and isfinite(ay) and isfinite(bx) and isfinite(by)
                    and isfinite(cx) and isfinite(cy)):
                continue
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if fabs(area) < 1e-12:
                continue
            inv_area = 1.0 / area
            x0 = <int>ceil(min(ax, min(bx, cx)))
            x1 = <int>floor(max(ax, max(bx, cx)))
            y0 = <int>ceil(min(ay, min(by, cy)))
            y1 = <int>floor(max(ay, max(by, cy)))
            if x0 < 0: x0 = 0
            if y0 < 0: y0 = 0
            if x1 > width - 1: x1 = width - 1
            if y1 > height - 1: y1 = height - 1
            for i in range(y0, y1 + 1):
                py = i
                for j in range(x0, x1 + 1):
                    px = j
                    w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) * inv_area
                    w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) * inv_area
                    w2 = ((ax - px) * (by - py) - (ay - py) * (bx - px)) * inv_area
                    if w0 < -INSIDE_EPS or w1 < -INSIDE_EPS or w2 < -INSIDE_EPS:
                        continue
                    z = w0 * depth[a] + w1 * depth[b] + w2 * depth[c]
                    if z < zbuf[i, j]:
                        zbuf[i, j] = z
                        tid[i, j] = f
                        for ch in range(n_ch):
                            image[i, j, ch] = w0 * colors[a, ch] + w1 * colors[b, ch] + w2 * colors[c, ch]
    return image_np, zbuf_np, tid_np
