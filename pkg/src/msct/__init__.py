"""Synergistic multi-spectral CT reconstruction with directional total variation."""

from msct.errors import (
    ConfigurationError,
    FormatError,
    MSCTError,
    NumericalError,
    StepSizeError,
)
from msct.geometry import ImageGrid, ScanGeometry, Sinogram, parallel_geometry, fan_geometry
from msct.tomo import XRayTransform, back_project, estimate_operator_norm, forward_project

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "FormatError",
    "ImageGrid",
    "MSCTError",
    "NumericalError",
    "ScanGeometry",
    "Sinogram",
    "StepSizeError",
    "XRayTransform",
    "back_project",
    "estimate_operator_norm",
    "fan_geometry",
    "forward_project",
    "parallel_geometry",
]
