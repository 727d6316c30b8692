"""Experiment harness: configuration, commands, output writers and the verify suite."""

from .config import PRESETS, ConfigError, ExperimentConfig, resolve

__all__ = ["PRESETS", "ConfigError", "ExperimentConfig", "resolve"]
