"""Rasterization, detailed albedo, keyframe backgrounds and compositing."""
from ._backend import BACKEND
from .albedo import extract_detailed_albedo, select_albedo_frame
from .background import (BackgroundPlate, composite, interpolate_backgrounds, interpolation_weights,
                         match_background, pose_distance_sq, select_keyframes, static_background)
from .raster import RenderedFrame, rasterize, rasterize_colors, shade_vertices

__all__ = [
    "BACKEND", "BackgroundPlate", "RenderedFrame", "composite", "extract_detailed_albedo",
    "interpolate_backgrounds", "interpolation_weights", "match_background", "pose_distance_sq",
    "rasterize", "rasterize_colors", "select_albedo_frame", "select_keyframes", "shade_vertices",
    "static_background",
]
