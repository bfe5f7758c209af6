"""Geometry-grounded cross-view UAV geo-localization on synthetic scenes."""

from .errors import CvglError, GeometryError, InputError
from .geometry import Plane, PointCloud, SE3Pose, fit_ground_plane
from .pipeline import LocalizationResult, PipelineOptions, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "CvglError",
    "GeometryError",
    "InputError",
    "LocalizationResult",
    "PipelineOptions",
    "Plane",
    "PointCloud",
    "SE3Pose",
    "fit_ground_plane",
    "run_pipeline",
]
