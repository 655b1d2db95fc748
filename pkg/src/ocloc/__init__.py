"""Unsupervised object-centric scene decomposition from several unspecified viewpoints."""

from .config import ConfigError, ModelConfig, TrainConfig, load_config, save_config
from .data import GeneratorSpec, Scene, generate_dataset, generate_scene, read_dataset, write_dataset
from .metrics import evaluate_scenes
from .model import OCLOC
from .trainer import Trainer, load_model, train

__all__ = [
    "ConfigError", "ModelConfig", "TrainConfig", "load_config", "save_config",
    "GeneratorSpec", "Scene", "generate_dataset", "generate_scene", "read_dataset",
    "write_dataset", "evaluate_scenes", "OCLOC", "Trainer", "load_model", "train",
]
