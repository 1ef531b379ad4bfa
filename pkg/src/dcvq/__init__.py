"""Distributed channel-optimized vector quantization of compressed-sensing
measurements from two correlated sparse sources."""

from dcvq.errors import (
    DegenerateModelError,
    InvalidArgumentError,
    InvalidParameterError,
    ConfigError,
)
from dcvq.model import (
    ModelParams,
    SensingMatrix,
    SourceBatch,
    SourceDraw,
    build_dct_sensing_matrix,
    derive_variances,
    sample_sources,
    sample_support,
    smnr,
)
from dcvq.channel import DmcModel, bsc_matrix, transmit

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateModelError",
    "DmcModel",
    "InvalidArgumentError",
    "InvalidParameterError",
    "ModelParams",
    "SensingMatrix",
    "SourceBatch",
    "SourceDraw",
    "bsc_matrix",
    "build_dct_sensing_matrix",
    "derive_variances",
    "sample_sources",
    "sample_support",
    "smnr",
    "transmit",
]
