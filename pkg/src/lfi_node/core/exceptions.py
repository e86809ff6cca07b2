"""
Custom exceptions for lfi-node.

Every exception carries the attributes a caller needs to react (the offending
field, the reached time, the condition number...) and builds a clear message
from them. Exceptions that reach the command line map to a stable exit code
through ``exit_code``.
"""

import math
from typing import Any, List, Optional, Sequence


class LfiNodeError(Exception):
    """Base class for all lfi-node errors."""

    exit_code = 1

    def __init__(self, reason: str = ""):
        self.reason = reason
        super().__init__(self._create_message())

    def _create_message(self) -> str:
        return self.reason


# Configuration (exit 2) ---------------------------------------------------


class ConfigError(LfiNodeError):
    """Raised when a configuration field is missing or out of range."""

    exit_code = 2

    def __init__(self, field: str, reason: str):
        self.field = field
        super().__init__(reason)

    def _create_message(self) -> str:
        return f"Invalid configuration field '{self.field}': {self.reason}"


# I/O (exit 3) -------------------------------------------------------------


class DataIOError(LfiNodeError):
    """Raised when a file or directory cannot be read or written."""

    exit_code = 3

    def __init__(self, path: Any, reason: str, original_error: Exception = None):
        self.path = str(path)
        self.original_error = original_error
        super().__init__(reason)

    def _create_message(self) -> str:
        message = f"I/O failure on '{self.path}': {self.reason}"
        if self.original_error:
            message += f" (Original error: {self.original_error})"
        return message


class FormatError(DataIOError):
    """Raised when a dataset, trajectory or model file is malformed."""

    def _create_message(self) -> str:
        return f"Malformed file '{self.path}': {self.reason}"


# Training (exit 4) --------------------------------------------------------


class NonConvergence(LfiNodeError):
    """Raised when training produces non-finite losses for too long."""

    exit_code = 4

    def __init__(self, iteration: int, consecutive: int):
        self.iteration = iteration
        self.consecutive = consecutive
        super().__init__()

    def _create_message(self) -> str:
        return (
            f"Training diverged: non-finite loss for {self.consecutive} consecutive "
            f"iterations (last at iteration {self.iteration})"
        )


# Estimation (exit 5) ------------------------------------------------------


class EstimationError(LfiNodeError):
    """Base class for latent-feature extraction failures."""

    exit_code = 5


class TooShort(EstimationError):
    """Raised when a trajectory has fewer samples than an operation needs."""

    def __init__(self, n_samples: int, required: int, what: str = "trajectory"):
        self.n_samples = n_samples
        self.required = required
        self.what = what
        super().__init__()

    def _create_message(self) -> str:
        return (
            f"{self.what} has {self.n_samples} samples, "
            f"at least {self.required} required"
        )


class InsufficientSamples(EstimationError):
    """Raised when too few samples lie in the neighbor band around x_ss."""

    def __init__(self, found: int, required: int):
        self.found = found
        self.required = required
        super().__init__()

    def _create_message(self) -> str:
        return (
            f"Only {self.found} samples qualify as equilibrium neighbors, "
            f"{self.required} required"
        )


class RankDeficient(EstimationError):
    """Raised when the deviation matrix does not excite every state direction."""

    def __init__(self, rank: int, state_dim: int, cond: float = math.inf):
        self.rank = rank
        self.state_dim = state_dim
        self.cond = cond
        super().__init__()

    def _create_message(self) -> str:
        return (
            f"Deviation matrix has rank {self.rank} < {self.state_dim} "
            f"(cond={self.cond})"
        )


class UnboundedError(EstimationError):
    """Raised when the noise bound is requested for a rank-deficient estimate."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__()

    def _create_message(self) -> str:
        return f"Error bound is unbounded: condition number is {self.cond}"


# Library-level numerics (exit 1 if they escape) ---------------------------


class DimensionError(LfiNodeError, ValueError):
    """Raised when an array does not have the expected shape."""

    def __init__(self, what: str, expected: Any, actual: Any):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__()

    def _create_message(self) -> str:
        return f"{self.what}: expected shape {self.expected}, got {self.actual}"


class NoEquilibrium(LfiNodeError):
    """Raised when Newton iteration finds no equilibrium."""

    def __init__(self, reason: str, iterations: int = 0, residual: float = math.nan):
        self.iterations = iterations
        self.residual = residual
        super().__init__(reason)

    def _create_message(self) -> str:
        return (
            f"No equilibrium found after {self.iterations} Newton steps "
            f"(residual={self.residual:.3e}): {self.reason}"
        )


class IntegrationFailure(LfiNodeError):
    """Raised when the adaptive solver cannot meet its tolerance."""

    def __init__(self, t_reached: float, reason: str, partial: Optional[Any] = None):
        self.t_reached = t_reached
        self.partial = partial
        super().__init__(reason)

    def _create_message(self) -> str:
        return f"Integration failed at t={self.t_reached:.6g}: {self.reason}"


class NonFiniteState(LfiNodeError):
    """Raised when a Runge-Kutta stage produces NaN or infinite values."""

    def __init__(self, step: int, rows: Sequence[int] = ()):
        self.step = step
        self.rows: List[int] = list(rows)
        super().__init__()

    def _create_message(self) -> str:
        where = f" in batch rows {self.rows}" if self.rows else ""
        return f"Non-finite state at step {self.step}{where}"


class CutoffError(LfiNodeError, ValueError):
    """Raised when a filter cutoff is not strictly between 0 and Nyquist."""

    def __init__(self, cutoff_hz: float, nyquist_hz: float):
        self.cutoff_hz = cutoff_hz
        self.nyquist_hz = nyquist_hz
        super().__init__()

    def _create_message(self) -> str:
        return (
            f"Cutoff {self.cutoff_hz} Hz must lie in (0, {self.nyquist_hz}) Hz "
            f"(Nyquist)"
        )


class TapeMissing(LfiNodeError):
    """Raised when gradients are requested from a rollout run without a tape."""

    def _create_message(self) -> str:
        return "Rollout was run without gradient recording; no tape available"


class DtMismatch(LfiNodeError):
    """Raised when a discrete model is asked to run at a foreign sample period."""

    def __init__(self, requested: float, trained: float):
        self.requested = requested
        self.trained = trained
        super().__init__()

    def _create_message(self) -> str:
        return (
            f"Discrete model trained at dt={self.trained} cannot run at "
            f"dt={self.requested}"
        )


class ConvergenceFailure(LfiNodeError):
    """Raised when the QR iteration exhausts its iteration cap."""

    def __init__(self, found: Sequence[complex], size: int):
        self.found = list(found)
        self.size = size
        super().__init__()

    def _create_message(self) -> str:
        return (
            f"QR iteration did not converge: {len(self.found)} of {self.size} "
            f"eigenvalues found"
        )
