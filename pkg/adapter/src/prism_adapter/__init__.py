"""Backbone adapter producing the evaluation toolkit's input files.

Wraps conditional denoisers (one-step activation extraction to PRSA) and
plain image encoders (baseline embedding export to PRSF).  Pretrained
backbones load lazily from local weights; seeded toy backbones cover the
full file contract without any downloads.
"""

from .backbones import (
    BackboneLoadError,
    PoseVector,
    ToyImageEmbedder,
    ToyUNetBackbone,
    load_denoiser,
    load_embedder,
)
from .extract import ExtractionJob, export_baseline_embeddings, extract_activations
from .schedule import NoiseSchedule, TimestepError

__version__ = "0.1.0"

__all__ = [
    "BackboneLoadError",
    "ExtractionJob",
    "NoiseSchedule",
    "PoseVector",
    "TimestepError",
    "ToyImageEmbedder",
    "ToyUNetBackbone",
    "export_baseline_embeddings",
    "extract_activations",
    "load_denoiser",
    "load_embedder",
]
