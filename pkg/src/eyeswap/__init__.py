"""Exemplar-guided eyeglasses removal and wearing by eye-code swapping."""
from .imagekit import DEFAULT_BOX, Domain, EyeBox, FaceImage
from .nets import NetConfig
from .losses import LossReport, LossWeights
from .trainer import TrainConfig

__all__ = ["DEFAULT_BOX", "Domain", "EyeBox", "FaceImage", "NetConfig", "LossReport", "LossWeights",
           "TrainConfig"]
__version__ = "0.1.0"
