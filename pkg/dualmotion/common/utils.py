"""Shared utilities: error types, environment lookups and logging setup."""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional

import numpy as np

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class DualMotionError(Exception):
    """Base class for every error raised by the package."""


class StructureError(DualMotionError):
    """Raised when shapes, skeletons, splits or checkpoints do not line up."""


class ArgumentError(DualMotionError, ValueError):
    """Raised for invalid scalar arguments (K < 2, T < 2, empty inputs)."""


class ContractError(DualMotionError):
    """Raised when a pre- or post-condition of an operation is violated."""


class ConfigError(DualMotionError):
    """Raised for conflicting configuration values or command-line flags."""


class MissingArtifactError(DualMotionError):
    """Raised when a required checkpoint or dataset is absent."""


class NumericalAbort(DualMotionError):
    """Raised when a loss becomes NaN or infinite during training."""


class ArtifactIOError(DualMotionError):
    """Raised when reading or writing an artifact fails."""

    def __init__(self, path: Path | str, reason: str):
        self.path = str(path)
        super().__init__(f"{reason} ({self.path})")


def get_env(name: str, default: Optional[str] = None, required: bool = False) -> Optional[str]:
    """Helper to read environment variables with optional requirement."""
    value = os.getenv(name, default)
    if required and not value:
        raise ConfigError(f"Missing required environment variable: {name}")
    return value


def check_finite(name: str, value: float) -> float:
    """Return ``value`` unchanged, raising NumericalAbort on NaN/Inf."""
    if not np.isfinite(value):
        raise NumericalAbort(f"{name} is not finite: {value}")
    return value


def setup_logging(log_dir: Optional[Path | str] = None, level: str = "INFO") -> logging.Logger:
    """Configure the root logger to write to the console and, optionally, a file.

    Args:
        log_dir: Directory receiving ``dualmotion.log``; console only when None
        level: Logging level name

    Returns:
        The package logger
    """
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_dir is not None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(log_dir) / 'dualmotion.log', mode='a'))
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO),
                        format=LOG_FORMAT, handlers=handlers, force=True)
    return logging.getLogger("dualmotion")
