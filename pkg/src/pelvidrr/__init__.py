"""Batch DRR simulation and PSI evaluation toolkit for pelvis volumes."""

from .geometry import (
    LandmarkSet,
    RigidTransform,
    TransformBounds,
    compute_psi,
    fit_app_plane,
    psi_of_posed_patient,
    sample_transform,
)
from .metrics import PsiReport, SegScore, dice, emit_plots, psi_error_report
from .phantom import PhantomSpec, generate_phantom
from .projector import CameraModel, RenderSettings, project_mask, render_batch, render_drr
from .volume_io import Image2, Volume3, read_image, read_volume, write_image, write_volume

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "Image2",
    "LandmarkSet",
    "PhantomSpec",
    "PsiReport",
    "RenderSettings",
    "RigidTransform",
    "SegScore",
    "TransformBounds",
    "Volume3",
    "compute_psi",
    "dice",
    "emit_plots",
    "fit_app_plane",
    "generate_phantom",
    "project_mask",
    "psi_error_report",
    "psi_of_posed_patient",
    "read_image",
    "read_volume",
    "render_batch",
    "render_drr",
    "sample_transform",
    "write_image",
    "write_volume",
]
