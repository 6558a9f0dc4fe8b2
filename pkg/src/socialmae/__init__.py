"""Masked-autoencoder pre-training on multi-person joint trajectories, with forecasting,
grouping and action heads, oracle-backed metrics and a synthetic scene generator."""
from .dct import dct_forward, dct_inverse
from .errors import (
    ConfigError,
    DegenerateInputError,
    NumericError,
    SceneFormatError,
    SceneValidationError,
    SocialMAEError,
    TrainingError,
)
from .heads import TaskModel
from .mae import ModelConfig, PretrainModel
from .scene import Scene, SynthConfig, center_scene, load_scene, pad_scene, save_scene, synth_scene

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "ModelConfig",
    "NumericError",
    "PretrainModel",
    "Scene",
    "SceneFormatError",
    "SceneValidationError",
    "SocialMAEError",
    "SynthConfig",
    "TaskModel",
    "TrainingError",
    "center_scene",
    "dct_forward",
    "dct_inverse",
    "load_scene",
    "pad_scene",
    "save_scene",
    "synth_scene",
]
