"""EV detection from smart-meter data with a temporal convolutional autoencoder."""

from .errors import (
    ConfigError,
    DataError,
    EvtaeError,
    FormatError,
    NumericError,
    ShapeError,
    TrainingDivergence,
)
from .losses import LossWeights
from .model import TaeConfig, TaeModel, forward, init_model, load, save, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "EvtaeError", "FormatError", "NumericError", "ShapeError",
    "TrainingDivergence", "LossWeights", "TaeConfig", "TaeModel", "forward", "init_model",
    "load", "save", "train", "__version__",
]
