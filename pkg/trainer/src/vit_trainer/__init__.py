"""Toy ViT trainer and VITW weight exporter.

Trains the binary classifier on synthetic square-signal images and writes
weights the inference package loads through its weight-file interface.
"""

from .data import make_dataset, square_region
from .export import ExportError, canonical_tensors, export
from .model import ARCH_TABLE, ModelSpec, ViTClassifier
from .train import TrainingDiverged, TrainReport, TrainSpec, train

__version__ = "0.1.0"
