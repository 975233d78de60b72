"""Soft-graph dimensionality reduction, unrolled attention blocks and a
character-level language model with standard or diffusion attention."""

from ._core import *  # noqa: F401,F403
from ._core import (
    DataError,
    Error,
    InvalidInput,
    InvalidParameter,
    ShapeError,
    TrainingDiverged,
)

__version__ = "0.1.0"
