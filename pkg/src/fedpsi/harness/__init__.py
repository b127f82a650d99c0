"""Configuration-driven experiment runner behind the ``fedpsi`` CLI."""

from .commands import cmd_compare, cmd_partition, cmd_sweep, cmd_train
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "cmd_compare",
    "cmd_partition",
    "cmd_sweep",
    "cmd_train",
    "config_from_dict",
    "load_config",
]
