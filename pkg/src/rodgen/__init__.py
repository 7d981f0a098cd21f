"""Generation engine for referring-instruction detection data."""
from .config import PipelineConfig, validate_config
from .core import (BBoxNorm, Expression, FilterScores, ImageRecord, InDetRecord, ObjectEntry,
                   TargetSet)
from .pipeline import Pipeline, StageError

__version__ = "0.1.0"

__all__ = ["BBoxNorm", "Expression", "FilterScores", "ImageRecord", "InDetRecord", "ObjectEntry",
           "Pipeline", "PipelineConfig", "StageError", "TargetSet", "validate_config"]
