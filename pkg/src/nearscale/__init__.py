"""Metric scale for monocular reconstructions from near-light photometry.

An endoscope carries its light sources a few millimetres from the lens.
Image brightness then falls off with the true, metric distance to the
surface, which pins down the one scale factor that multi-view geometry
leaves free.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError, DegenerateBaseline, DegenerateError, DegenerateMotion, InputError,
    InsufficientData, NearScaleError, NoSolution, NormalEstimationError, ParseError,
    SingularGeometry,
)
from .estimator import estimate, measure_diameter  # noqa: E402
from .recon_io import (  # noqa: E402
    CalibrationRig, CameraPose, EstimationReport, ObservationSet, Reconstruction, ScenePoint,
)
from .twoview import TwoViewConfig, solve_two_view_scale  # noqa: E402

__all__ = [
    "CalibrationRig", "CameraPose", "ConvergenceError", "DegenerateBaseline", "DegenerateError",
    "DegenerateMotion", "EstimationReport", "InputError", "InsufficientData", "NearScaleError",
    "NoSolution", "NormalEstimationError", "ObservationSet", "ParseError", "Reconstruction",
    "ScenePoint", "SingularGeometry", "TwoViewConfig", "estimate", "measure_diameter",
    "solve_two_view_scale",
]
