"""Physics-based simulation and inversion of book-scan artifacts.

A page bound to a spine bends as an Euler elastica; scanning it distorts,
blurs, and darkens the image in ways controlled by a handful of physical
parameters.  This package simulates those artifacts, inverts them, and
estimates the parameters from page profiles, whitespace, and calibration
strips.
"""

from .errors import (
    CalibrationError,
    CodecError,
    DescanError,
    DetectorError,
    DimensionError,
    DomainError,
    EstimationError,
    FitError,
    ParameterError,
    SolverError,
)
from .estimate import (
    DetectorReport,
    FitResult,
    column_rms_report,
    detect_artifacts,
    estimate_from_whitespace,
    fit_calibration_strip,
    fit_shape,
)
from .forward import (
    BlurOperator,
    blur,
    build_blur_operator,
    darken,
    distort,
    simulate,
)
from .geometry import PageShape, ScanParams, shape_at_x, solve_shape
from .inverse import SolverConfig, deblur, lighten, recover, undistort
from .kernels import kernel_backend
from .raster import Image, Mask, channel_map, load_image, save_image

__version__ = "0.1.0"

__all__ = [
    "BlurOperator",
    "CalibrationError",
    "CodecError",
    "DescanError",
    "DetectorError",
    "DetectorReport",
    "DimensionError",
    "DomainError",
    "EstimationError",
    "FitError",
    "FitResult",
    "Image",
    "Mask",
    "PageShape",
    "ParameterError",
    "ScanParams",
    "SolverConfig",
    "SolverError",
    "blur",
    "build_blur_operator",
    "channel_map",
    "column_rms_report",
    "darken",
    "deblur",
    "detect_artifacts",
    "distort",
    "estimate_from_whitespace",
    "fit_calibration_strip",
    "fit_shape",
    "kernel_backend",
    "lighten",
    "load_image",
    "recover",
    "save_image",
    "shape_at_x",
    "simulate",
    "solve_shape",
    "undistort",
]
