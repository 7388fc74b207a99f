"""Experiment configs, runners, metric files, checkpoints and acceptance checks."""

from .config import ConfigError, ExperimentConfig, default_config, load_config
from .experiments import RUNNERS, Output, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "default_config", "load_config", "RUNNERS", "Output", "run_experiment"]
