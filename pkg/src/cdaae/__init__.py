"""Conditional difference adversarial autoencoder for facial expression synthesis."""

from .model import CdaaeModel, LossBundle, SkipPosition, compute_losses
from .optim import Adam
from .tensor import DimensionError, Graph, GraphError, NumericError, Tensor

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CdaaeModel",
    "DimensionError",
    "Graph",
    "GraphError",
    "LossBundle",
    "NumericError",
    "SkipPosition",
    "Tensor",
    "compute_losses",
    "__version__",
]
