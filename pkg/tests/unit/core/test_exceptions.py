"""
Unit tests for the lfi-node exception hierarchy.

Tests focus on exit codes, attributes and error message quality.
"""

import math

import pytest

from lfi_node.core.exceptions import (
    ConfigError,
    ConvergenceFailure,
    CutoffError,
    DataIOError,
    DimensionError,
    DtMismatch,
    EstimationError,
    FormatError,
    InsufficientSamples,
    IntegrationFailure,
    LfiNodeError,
    NoEquilibrium,
    NonConvergence,
    NonFiniteState,
    RankDeficient,
    TapeMissing,
    TooShort,
    UnboundedError,
)


class TestExitCodes:
    """Test cases for command-line exit codes."""

    @pytest.mark.parametrize(
        "error,code",
        [
            (ConfigError("train.lr", "must be > 0"), 2),
            (DataIOError("/x", "missing"), 3),
            (FormatError("/x", "bad header"), 3),
            (NonConvergence(12, 10), 4),
            (TooShort(3, 10), 5),
            (InsufficientSamples(1, 2), 5),
            (RankDeficient(1, 2), 5),
            (UnboundedError(math.inf), 5),
            (NoEquilibrium("singular Jacobian"), 1),
            (IntegrationFailure(0.5, "step size underflow"), 1),
        ],
    )
    def test_exit_code(self, error, code):
        """Test that each error maps to its exit code."""
        assert isinstance(error, LfiNodeError)
        assert error.exit_code == code

    def test_estimation_family(self):
        """Test that extraction failures share one base class."""
        for error in (TooShort(1, 2), RankDeficient(1, 2), UnboundedError(1.0)):
            assert isinstance(error, EstimationError)

    def test_value_error_compatibility(self):
        """Test that shape and cutoff errors are also ValueErrors."""
        assert isinstance(DimensionError("x", (2,), (3,)), ValueError)
        assert isinstance(CutoffError(600.0, 500.0), ValueError)


class TestMessages:
    """Test cases for error messages and attributes."""

    def test_config_error(self):
        """Test that ConfigError names the field and the reason."""
        error = ConfigError("data.dt", "must be > 0")

        assert error.field == "data.dt"
        assert str(error) == "Invalid configuration field 'data.dt': must be > 0"

    def test_data_io_error_keeps_original(self):
        """Test that the underlying OSError is kept and mentioned."""
        original = PermissionError("denied")
        error = DataIOError("/data/traj.csv", "cannot read trajectory", original)

        assert error.original_error is original
        assert "/data/traj.csv" in str(error)
        assert "denied" in str(error)

    def test_format_error_is_data_io_error(self):
        """Test that malformed files are caught as I/O errors."""
        with pytest.raises(DataIOError) as exc_info:
            raise FormatError("model.json", "invalid JSON")
        assert "Malformed file 'model.json'" in str(exc_info.value)

    def test_non_convergence(self):
        """Test that NonConvergence reports the iteration and the streak."""
        error = NonConvergence(iteration=57, consecutive=10)

        assert "10 consecutive" in str(error)
        assert "iteration 57" in str(error)

    def test_integration_failure_carries_partial(self):
        """Test that the partial result rides on the exception."""
        partial = object()
        error = IntegrationFailure(1.25, "max_steps=3 exhausted", partial)

        assert error.partial is partial
        assert error.t_reached == 1.25
        assert str(error) == "Integration failed at t=1.25: max_steps=3 exhausted"

    def test_non_finite_state_rows(self):
        """Test that diverging batch rows are listed."""
        assert "rows [0, 3]" in str(NonFiniteState(4, [0, 3]))
        assert "rows" not in str(NonFiniteState(4))

    def test_no_equilibrium(self):
        """Test that NoEquilibrium reports the Newton state."""
        error = NoEquilibrium("step cap exhausted", 50, 1e-3)

        assert "50 Newton steps" in str(error)
        assert "1.000e-03" in str(error)

    def test_dimension_error(self):
        """Test that DimensionError shows expected and actual shapes."""
        error = DimensionError("state", (2,), (3,))

        assert str(error) == "state: expected shape (2,), got (3,)"

    def test_misc_messages(self):
        """Test the remaining messages mention their key quantities."""
        assert "600.0 Hz" in str(CutoffError(600.0, 500.0))
        assert "dt=0.1" in str(DtMismatch(0.2, 0.1))
        assert "1 of 3" in str(ConvergenceFailure([1j], 3))
        assert "tape" in str(TapeMissing())
        assert "rank 1 < 2" in str(RankDeficient(1, 2))
