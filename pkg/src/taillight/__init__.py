"""Taillight-signal behavior classification.

Night synthesis, corruption augmentation, rarity attention, CNN features,
PCA and a Crammer-Singer SVM, wired into a reproducible pipeline.
"""

from .dataset_io import BehaviorClass, BoundingBox, AnnotatedFrame
from .pipeline import PipelineConfig, run_pipeline

__all__ = ["AnnotatedFrame", "BehaviorClass", "BoundingBox", "PipelineConfig", "run_pipeline"]
__version__ = "0.1.0"
