"""Instruction-guided visual region selection and refinement at desk scale."""
from .alignment import AlignmentModel, InstructionEmbedding, embed_text, region_similarity
from .errors import BoundsError, ConfigError, DimensionError, NumericalError, PinPointError, PipelineError
from .estimator import PinPointSelector, evaluate
from .grid import BoxPx, GtAnnotation, RegionWindow, TokenGrid, slide_windows
from .metrics import anls, region_accuracy
from .selection import SelectionResult, adaptive_select, crop_grid, rank_regions, refine
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentModel", "InstructionEmbedding", "embed_text", "region_similarity",
    "BoundsError", "ConfigError", "DimensionError", "NumericalError", "PinPointError", "PipelineError",
    "PinPointSelector", "evaluate", "BoxPx", "GtAnnotation", "RegionWindow", "TokenGrid", "slide_windows",
    "anls", "region_accuracy", "SelectionResult", "adaptive_select", "crop_grid", "rank_regions", "refine",
    "TrainConfig", "train",
]
