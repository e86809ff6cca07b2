"""
Unit tests for the integrators: the classical RK4 step, the adaptive
Dormand-Prince solver and the recorded training rollouts.
"""

import math

import numpy as np
import pytest

from lfi_node.core.exceptions import IntegrationFailure, NonFiniteState
from lfi_node.integrate import (
    IntegratorConfig,
    Method,
    rollout_window,
    solve_adaptive,
    step_rk4,
)
from lfi_node.neuralfield import forward, init
from lfi_node.signals.trajectory import InputSchedule


def decay(x, u):
    return -x


class TestIntegratorConfig:
    """Test cases for IntegratorConfig validation."""

    def test_defaults(self):
        """Test the default tolerances."""
        config = IntegratorConfig()

        assert config.method is Method.RK45_ADAPTIVE
        assert config.rtol == 1e-7
        assert config.atol == 1e-9
        assert config.max_steps == 200_000

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"method": "rk4_fixed"},
            {"rtol": 0.0},
            {"rtol": 1.0},
            {"atol": -1.0},
            {"max_steps": 0},
        ],
    )
    def test_invalid_values(self, kwargs):
        """Test that invalid settings are rejected."""
        with pytest.raises(ValueError):
            IntegratorConfig(**kwargs)


class TestStepRk4:
    """Test cases for the fixed RK4 step."""

    def test_zero_field(self):
        """Test that a zero field leaves the state unchanged."""
        x = np.array([1.0, -2.0])

        np.testing.assert_array_equal(
            step_rk4(lambda x, u: np.zeros_like(x), x, None, 0.1), x
        )

    def test_exponential_decay(self):
        """Test one step of x' = -x against e^-h."""
        x_next = step_rk4(decay, np.array([1.0]), None, 0.1)

        assert x_next[0] == pytest.approx(0.9048375, abs=1e-7)
        assert abs(x_next[0] - math.exp(-0.1)) <= 2e-8

    def test_superposition_for_linear_field(self):
        """Test that the step of a linear field is linear in x."""
        A = np.array([[0.0, 1.0], [-2.0, -3.0]])

        def field(x, u):
            return A @ x

        a, b = np.array([1.0, 0.5]), np.array([-0.3, 2.0])
        combined = step_rk4(field, 2.0 * a + 3.0 * b, None, 0.05)
        separate = 2.0 * step_rk4(field, a, None, 0.05) + 3.0 * step_rk4(
            field, b, None, 0.05
        )

        np.testing.assert_allclose(combined, separate, rtol=1e-13, atol=1e-13)

    def test_fourth_order_convergence(self):
        """Test that halving h cuts the global error on [0, 1] about 16 times."""

        def global_error(n):
            x = np.array([1.0])
            for _ in range(n):
                x = step_rk4(decay, x, None, 1.0 / n)
            return abs(x[0] - math.exp(-1.0))

        order = math.log2(global_error(10) / global_error(20))

        assert order >= 3.8

    def test_non_finite_state(self):
        """Test that an overflowing step raises NonFiniteState."""
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NonFiniteState):
                step_rk4(lambda x, u: x * 1e308, np.array([1e10]), None, 1.0)


class TestSolveAdaptive:
    """Test cases for the adaptive solver."""

    def test_exponential_decay_accuracy(self):
        """Test x' = -x over [0, 5] against e^-t."""
        traj = solve_adaptive(
            decay, [1.0], InputSchedule.constant([0.0]), (0.0, 5.0), dt=0.01
        )

        error = np.max(np.abs(traj.states[:, 0] - np.exp(-traj.times)))

        assert traj.n_samples == 500
        assert traj.states[0, 0] == 1.0
        assert error <= 1e-6

    def test_tighter_tolerance_is_not_worse(self):
        """Test that rtol 1e-7 is at least as accurate as rtol 1e-5."""
        schedule = InputSchedule.constant([0.0])

        def error(rtol):
            config = IntegratorConfig(rtol=rtol)
            traj = solve_adaptive(decay, [1.0], schedule, (0.0, 5.0), config, 0.01)
            return np.max(np.abs(traj.states[:, 0] - np.exp(-traj.times)))

        assert error(1e-7) <= error(1e-5)

    def test_blow_up_raises_integration_failure(self):
        """Test that x' = x^2 from 1 fails near its blow-up time t = 1."""
        with pytest.raises(IntegrationFailure) as exc_info:
            solve_adaptive(
                lambda x, u: x * x,
                [1.0],
                InputSchedule.constant([0.0]),
                (0.0, 2.0),
                dt=0.01,
            )

        failure = exc_info.value
        assert failure.t_reached == pytest.approx(1.0, abs=0.01)
        assert failure.partial is not None
        assert failure.partial.truncated
        assert failure.partial.n_samples >= 90

    def test_input_step_is_honored(self):
        """Test x' = u with a unit step at t = 1 gives a ramp after the step."""
        schedule = InputSchedule.step([0.0], [1.0], 1.0)

        traj = solve_adaptive(
            lambda x, u: np.asarray(u, dtype=float), [0.0], schedule, (0.0, 3.0), dt=0.1
        )

        expected = np.maximum(traj.times - 1.0, 0.0)
        np.testing.assert_allclose(traj.states[:, 0], expected, atol=1e-9)
        np.testing.assert_array_equal(traj.inputs[:10, 0], np.zeros(10))
        np.testing.assert_array_equal(traj.inputs[10:, 0], np.ones(20))

    def test_max_steps_exhausted(self):
        """Test that a tiny step budget raises IntegrationFailure."""
        config = IntegratorConfig(max_steps=3)
        with pytest.raises(IntegrationFailure) as exc_info:
            solve_adaptive(
                lambda x, u: np.array([math.cos(50 * x[1]), 1.0]),
                [0.0, 0.0],
                InputSchedule.constant([0.0]),
                (0.0, 10.0),
                config,
                0.01,
            )
        assert "max_steps" in str(exc_info.value)

    def test_fixed_rk4_method(self):
        """Test that the rk4_fixed method fills the same grid accurately."""
        config = IntegratorConfig(method="rk4_fixed", h=0.01)

        traj = solve_adaptive(
            decay, [1.0], InputSchedule.constant([0.0]), (0.0, 2.0), config, 0.05
        )

        assert traj.n_samples == 40
        np.testing.assert_allclose(traj.states[:, 0], np.exp(-traj.times), atol=1e-9)

    def test_deterministic(self):
        """Test that repeated solves are bit-identical."""
        schedule = InputSchedule.step([0.0], [1.0], 0.5)

        def field(x, u):
            return np.array([x[1], -x[0] - 0.3 * x[1] + u[0]])

        first = solve_adaptive(field, [1.0, 0.0], schedule, (0.0, 4.0), dt=0.02)
        second = solve_adaptive(field, [1.0, 0.0], schedule, (0.0, 4.0), dt=0.02)

        np.testing.assert_array_equal(first.states, second.states)


class TestRolloutWindow:
    """Test cases for the fixed-step training rollout."""

    def test_zero_network_is_constant(self):
        """Test that a zero-weight network predicts x0 at every step."""
        params = init([3, 4, 2], seed=0)
        params = params.with_arrays(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )
        x0 = np.array([0.3, -0.1])

        preds, tape = rollout_window(params, x0, np.zeros((5, 1)), 0.1)

        assert tape is None
        np.testing.assert_array_equal(preds, np.tile(x0, (5, 1)))

    def test_single_step_equals_step_rk4(self):
        """Test that K = 1 equals one RK4 step of the same field."""
        params = init([3, 6, 2], seed=1)
        x0 = np.array([0.2, 0.4])
        u = np.array([0.5])

        preds, _ = rollout_window(params, x0, u[None, :], 0.05)
        expected = step_rk4(lambda x, v: forward(params, x, v), x0, u, 0.05)

        np.testing.assert_allclose(preds[0], expected, rtol=1e-14, atol=1e-14)

    def test_batch_matches_single_rows(self):
        """Test that batched rows evolve independently."""
        params = init([3, 5, 2], seed=2)
        x0 = np.array([[0.1, 0.2], [-0.4, 0.3]])
        inputs = np.array([[[0.1]] * 4, [[-0.2]] * 4])

        batch, tape = rollout_window(params, x0, inputs, 0.1, record_gradients=True)
        first, _ = rollout_window(params, x0[0], inputs[0], 0.1)

        assert batch.shape == (2, 4, 2)
        assert len(tape.steps) == 4
        np.testing.assert_allclose(batch[0], first, rtol=1e-14, atol=1e-14)

    def test_agrees_with_adaptive_solver(self):
        """Test that the rollout and the adaptive solver agree over one window."""
        params = init([3, 8, 2], seed=3)
        x0 = np.array([0.2, -0.1])
        h = 0.01

        preds, _ = rollout_window(params, x0, np.full((10, 1), 0.3), h)
        traj = solve_adaptive(
            lambda x, u: forward(params, x, u),
            x0,
            InputSchedule.constant([0.3]),
            (0.0, 11 * h),
            dt=h,
        )

        np.testing.assert_allclose(preds, traj.states[1:11], atol=1e-5)

    def test_non_finite_rows_are_reported(self):
        """Test that a diverging row is named in NonFiniteState."""
        params = init([2, 1], seed=0)
        params = params.with_arrays([np.array([[1e300, 0.0]])], [np.zeros(1)])
        x0 = np.array([[0.0], [1e10]])

        with pytest.raises(NonFiniteState) as exc_info:
            rollout_window(params, x0, np.zeros((2, 3, 1)), 1.0)

        assert exc_info.value.rows == [1]

    def test_needs_one_step(self):
        """Test that an empty window is rejected."""
        params = init([3, 2], seed=0)
        with pytest.raises(ValueError):
            rollout_window(params, np.zeros(2), np.zeros((0, 1)), 0.1)
