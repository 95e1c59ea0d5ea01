"""Curation of exocentric video-language corpora into egocentric-style
training manifests, with reference checks for the contrastive objective and
retrieval metrics."""

from .core import (
    BoundingBox,
    ClipRecord,
    DatasetManifest,
    EmbeddingBatch,
    FrameDetections,
    HandDetection,
    LossReport,
    ManifestEntry,
    NarrationRecord,
    ObjectDetection,
    ScoredClip,
    ValidationError,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ClipRecord",
    "DatasetManifest",
    "EmbeddingBatch",
    "FrameDetections",
    "HandDetection",
    "LossReport",
    "ManifestEntry",
    "NarrationRecord",
    "ObjectDetection",
    "ScoredClip",
    "ValidationError",
    "validate",
]
