"""Parametric face model: bases, assembly, SH shading, projection, fitting."""
from .basis import FaceBasis, export_obj, icosphere, load_basis, save_basis, synthetic_basis
from .fitting import FitResult, fit_to_landmarks
from .model import (
    SH_CONSTANT,
    Camera,
    CoefficientSet,
    FaceMesh,
    assemble_shape,
    assemble_texture,
    build_mesh,
    project,
    rotation_matrix,
    sh_basis,
    sh_irradiance,
    sh_shading,
    to_camera,
    vertex_normals,
    wrap_angle,
)

__all__ = [
    "SH_CONSTANT", "Camera", "CoefficientSet", "FaceBasis", "FaceMesh", "FitResult",
    "assemble_shape", "assemble_texture", "build_mesh", "export_obj", "fit_to_landmarks",
    "icosphere", "load_basis", "project", "rotation_matrix", "save_basis", "sh_basis",
    "sh_irradiance", "sh_shading", "synthetic_basis", "to_camera", "vertex_normals", "wrap_angle",
]
