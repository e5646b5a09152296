"""Pixel-pair background subtraction with co-occurrence supports."""
import warnings

# numba probes for TBB on first parallel launch and warns when it is missing
warnings.filterwarnings("ignore", message=".*TBB.*")

from .errors import (  # noqa: E402
    DecodeError, IncompatibleModel, InsufficientCandidates, InsufficientData,
    InvalidInput, NumericFailure, SequenceGap, TrainingError,
)
from .model import BackgroundModel, detect, step  # noqa: E402
from .params import ModelParams  # noqa: E402
from .trainer import train  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "BackgroundModel", "ModelParams", "train", "detect", "step",
    "DecodeError", "IncompatibleModel", "InsufficientCandidates", "InsufficientData",
    "InvalidInput", "NumericFailure", "SequenceGap", "TrainingError",
]
