"""
Core infrastructure for lfi-node: the exception hierarchy and run configuration.

Only the exceptions are re-exported here; ``lfi_node.core.config`` depends on
the training package and is imported explicitly.
"""

from .exceptions import (
    ConfigError,
    DataIOError,
    EstimationError,
    FormatError,
    LfiNodeError,
    NonConvergence,
)

__all__ = [
    "ConfigError",
    "DataIOError",
    "EstimationError",
    "FormatError",
    "LfiNodeError",
    "NonConvergence",
]
