"""Experiment harness: configs, presets, training loop, verification and the CLI."""
from .config import PRESETS, ConfigError, ExperimentConfig, get_preset
from .train import RunResult, evaluate, train

__all__ = ["PRESETS", "ConfigError", "ExperimentConfig", "RunResult", "evaluate", "get_preset",
           "train"]
