"""Chip-level OFCDM uplink simulator with receiver-centric group admission."""

from .config import ConfigError, SystemConfig, load_config, validate_config
from .protocol import BASELINE, MODES, PROBING, Simulator, Streams, advance_frame

__all__ = [
    "BASELINE",
    "MODES",
    "PROBING",
    "ConfigError",
    "Simulator",
    "Streams",
    "SystemConfig",
    "advance_frame",
    "load_config",
    "validate_config",
]
__version__ = "0.1.0"
