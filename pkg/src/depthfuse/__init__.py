"""Depth-map fusion, set-image losses, metrics, filters and projection."""

from depthfuse.core import (
    CameraIntrinsics,
    DepthMap,
    GradientMap,
    RgbImage,
    Scale,
    to_linear,
    to_log,
    valid_intersection,
)
from depthfuse.fusion import (
    FusionProblem,
    FusionResult,
    IrlsConfig,
    dense_oracle_fusion,
    fuse,
    gradient_op,
    solve_fusion,
)
from depthfuse.metrics import MetricsReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "DepthMap", "GradientMap", "RgbImage", "Scale", "to_linear", "to_log",
    "valid_intersection", "FusionProblem", "FusionResult", "IrlsConfig", "dense_oracle_fusion",
    "fuse", "gradient_op", "solve_fusion", "MetricsReport", "evaluate",
]
