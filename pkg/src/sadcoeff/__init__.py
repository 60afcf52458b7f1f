"""Seeded, CPU-only audio-to-motion pipeline at coefficient level.

Audio drives 64 expression coefficients (lip content distilled from a
frozen oracle, eyelids steered by an explicit blink signal); a
conditional VAE generates stylized 6-dim head-pose sequences; a temporal
convolutional mapper turns 70-dim coefficient windows into keypoint
motion.  Everything trains in minutes on one CPU core against synthetic
seeded corpora, and every artifact is bit-reproducible.
"""

from .config import RunConfig
from .core3dmm import (COEFF_DIM, EXP_DIM, POSE_DIM, ExpressionCoeffs,
                       MotionCoeffs, PoseCoeffs)
from .errors import (ConfigError, DegenerateGeometryError, DegenerateInputError,
                     DimensionError, EmptyInputError, FormatError,
                     TrainingDivergedError)

__version__ = "0.1.0"

__all__ = [
    "COEFF_DIM", "EXP_DIM", "POSE_DIM",
    "ConfigError", "DegenerateGeometryError", "DegenerateInputError",
    "DimensionError", "EmptyInputError", "ExpressionCoeffs", "FormatError",
    "MotionCoeffs", "PoseCoeffs", "RunConfig", "TrainingDivergedError",
    "__version__",
]
