"""Pick the compiled raster kernel when importable, else the numpy one.

Set ``TALKINGHEAD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
rasterize_triangles = _kernels_py.rasterize_triangles

if os.environ.get("TALKINGHEAD_PURE_PYTHON") != "1":
    try:
        from ._kernels import rasterize_triangles  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass
