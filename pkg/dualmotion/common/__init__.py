"""Common helpers shared by every stage."""

from .utils import (
    ArgumentError,
    ArtifactIOError,
    ConfigError,
    ContractError,
    DualMotionError,
    MissingArtifactError,
    NumericalAbort,
    StructureError,
    check_finite,
    get_env,
    setup_logging,
)

__all__ = [
    "ArgumentError",
    "ArtifactIOError",
    "ConfigError",
    "ContractError",
    "DualMotionError",
    "MissingArtifactError",
    "NumericalAbort",
    "StructureError",
    "check_finite",
    "get_env",
    "setup_logging",
]
