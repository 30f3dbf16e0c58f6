"""Sketch- and color-guided image hole filling, float64 end to end."""

from .autodiff import (
    ChannelStats,
    ConvParams,
    Graph,
    ShapeError,
    Tensor,
    backward,
    channel_stats,
    conv2d,
    conv_transpose2d,
)
from .gradcheck import grad_check
from .injection import InjectionParams, build_injection, inject
from .kernels import BACKEND
from .losses import FeatureExtractor, LossReport, LossWeights, total_loss
from .network import BackboneConfig, EditInput, build_generator, generator_forward
from .structure import ControlBundle, SGBConfig, SGBState, sgb_forward
from .trainer import Checkpoint, TrainSettings, compose, load_checkpoint, save_checkpoint, train

__all__ = [
    "BACKEND",
    "BackboneConfig",
    "ChannelStats",
    "Checkpoint",
    "ControlBundle",
    "ConvParams",
    "EditInput",
    "FeatureExtractor",
    "Graph",
    "InjectionParams",
    "LossReport",
    "LossWeights",
    "SGBConfig",
    "SGBState",
    "ShapeError",
    "Tensor",
    "backward",
    "build_generator",
    "build_injection",
    "channel_stats",
    "compose",
    "conv2d",
    "conv_transpose2d",
    "generator_forward",
    "grad_check",
    "inject",
    "load_checkpoint",
    "save_checkpoint",
    "sgb_forward",
    "total_loss",
    "train",
]
