"""Waterfall transformer pose estimation, CPU reference implementation."""

from ._core import (
    AnnotationError,
    ConfigError,
    ContractError,
    CorruptionError,
    DimensionError,
    Error,
    IoError,
    LoadError,
    Model,
    NumericError,
    VersionError,
    checkpoint_tensors,
    evaluate_files,
    gradcheck,
    neighborhood,
    read_ppm,
    receptive_field,
    synth,
    write_ppm,
)

__all__ = [
    "AnnotationError",
    "ConfigError",
    "ContractError",
    "CorruptionError",
    "DimensionError",
    "Error",
    "IoError",
    "LoadError",
    "Model",
    "NumericError",
    "VersionError",
    "checkpoint_tensors",
    "evaluate_files",
    "gradcheck",
    "neighborhood",
    "read_ppm",
    "receptive_field",
    "synth",
    "write_ppm",
]
