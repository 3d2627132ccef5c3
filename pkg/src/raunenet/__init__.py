"""Residual and attention-driven underwater image enhancement."""

__version__ = "0.1.0"

from .config import LossWeights, NetworkConfig, PreprocessSpec, SsimParams, TrainConfig
from .estimator import RauneNetEnhancer
from .model import RauneNet, build_network, forward
from .validation import ImageBatch

__all__ = [
    "ImageBatch",
    "LossWeights",
    "NetworkConfig",
    "PreprocessSpec",
    "RauneNet",
    "RauneNetEnhancer",
    "SsimParams",
    "TrainConfig",
    "build_network",
    "forward",
]
