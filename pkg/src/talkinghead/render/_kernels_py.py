"""Pure numpy rasterizer; same contract and arithmetic as the compiled kernel."""
from __future__ import annotations

import numpy as np

INSIDE_EPS = 1e-9


def rasterize_triangles(uv, depth, colors, tris, height, width):
    """Rasterize triangles with a z-buffer.

    Pixel (i, j) samples the point x=j, y=i.  Returns the interpolated
    attribute image (H, W, C), the depth buffer (inf where empty) and the
    winning triangle index per pixel (-1 where empty).  Equal depths keep
    the earlier triangle.
    """
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    tris = np.asarray(tris, dtype=np.int64)
    n_ch = colors.shape[1]
    image = np.zeros((height, width, n_ch))
    zbuf = np.full((height, width), np.inf)
    tid = np.full((height, width), -1, dtype=np.int64)

    for f, (a, b, c) in enumerate(tris):
        if depth[a] <= 0 or depth[b] <= 0 or depth[c] <= 0:
            continue
        (ax, ay), (bx, by), (cx, cy) = uv[a], uv[b], uv[c]
        if not np.all(np.isfinite([ax, ay, bx, by, cx, cy])):
            continue
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            continue
        inv_area = 1.0 / area
        x0 = max(int(np.ceil(min(ax, bx, cx))), 0)
        x1 = min(int(np.floor(max(ax, bx, cx))), width - 1)
        y0 = max(int(np.ceil(min(ay, by, cy))), 0)
        y1 = min(int(np.floor(max(ay, by, cy))), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        py, px = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
        w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) * inv_area
        w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) * inv_area
        w2 = ((ax - px) * (by - py) - (ay - py) * (bx - px)) * inv_area
        z = w0 * depth[a] + w1 * depth[b] + w2 * depth[c]
        win = (w0 >= -INSIDE_EPS) & (w1 >= -INSIDE_EPS) & (w2 >= -INSIDE_EPS)
        win &= z < zbuf[y0:y1 + 1, x0:x1 + 1]
        if not win.any():
            continue
        ii, jj = np.nonzero(win)
        ii_img, jj_img = ii + y0, jj + x0
        zbuf[ii_img, jj_img] = z[ii, jj]
        tid[ii_img, jj_img] = f
        image[ii_img, jj_img] = (w0[ii, jj, None] * colors[a] + w1[ii, jj, None] * colors[b]
                                 + w2[ii, jj, None] * colors[c])
    return image, zbuf, tid
