"""
Unit tests for latent perturbation feature extraction: equilibrium
detection, neighbor selection, the least-squares Jacobian and its noise bound.
"""

import math

import numpy as np
import pytest

from lfi_node import jacest, plants
from lfi_node.core.exceptions import (
    InsufficientSamples,
    RankDeficient,
    TooShort,
    UnboundedError,
)
from lfi_node.jacest import EquilibriumEstimate, JacobianEstimate
from lfi_node.integrate import IntegratorConfig
from lfi_node.plants import PlantModel
from lfi_node.signals.processing import (
    add_noise,
    default_cutoff,
    finite_diff,
    simulate,
    zero_phase_lowpass,
)
from lfi_node.signals.trajectory import InputSchedule, Trajectory

A = np.array([[0.0, 1.0], [-2.0, -3.0]])
ORIGIN = EquilibriumEstimate(np.zeros(2), (0, 0), 0.0)


def cloud(n=40, seed=0, scale=0.1):
    """Random states around the origin as a trajectory with zero inputs."""
    rng = np.random.default_rng(seed)
    return Trajectory(0.01, scale * rng.normal(size=(n, 2)), np.zeros((n, 1)))


def settling_trajectory():
    """A ramp that settles to a constant tail at [1, 2]."""
    n = 100
    states = np.empty((n, 2))
    t = np.linspace(0.0, 1.0, 60)
    states[:60] = np.column_stack([t, 2 * t])
    states[60:] = [1.0, 2.0]
    return Trajectory(0.01, states, np.zeros((n, 1)))


def droop_run(u=(1.0, 1.0), offset=(0.0, 0.1), duration=1.0):
    """The droop plant sampled at 2e-4 s from its equilibrium plus ``offset``."""
    plant = PlantModel.from_spec("gfm_droop", {})
    x_ss = plants.find_equilibrium(plant, list(u), [0.0, 0.5])
    rk4 = IntegratorConfig(method="rk4_fixed", h=2e-4)
    traj = simulate(
        plant,
        x_ss + np.asarray(offset),
        InputSchedule.constant(list(u)),
        2e-4,
        duration,
        rk4,
    )
    return plant, x_ss, traj


def linear_decay():
    """Noise-free decay of the linear plant from [1, 1] over 20 s."""
    plant = PlantModel.from_spec("linear", {"A": A.tolist(), "B": [[0.0], [1.0]]})
    return simulate(plant, [1.0, 1.0], InputSchedule.constant([0.0]), 0.01, 20.0)


class TestDetectEquilibrium:
    """Test cases for steady-window detection."""

    def test_finds_settled_tail(self):
        """Test that the quietest window is the constant tail."""
        eq = jacest.detect_equilibrium(settling_trajectory(), window_len=10)

        np.testing.assert_allclose(eq.x_ss, [1.0, 2.0])
        assert eq.window == (90, 100)
        assert eq.residual == pytest.approx(0.0, abs=1e-12)

    def test_window_longer_than_trajectory(self):
        """Test that a window longer than the data raises TooShort."""
        with pytest.raises(TooShort):
            jacest.detect_equilibrium(settling_trajectory(), window_len=101)

    def test_window_too_small(self):
        """Test that a one-sample window is rejected."""
        with pytest.raises(ValueError):
            jacest.detect_equilibrium(settling_trajectory(), window_len=1)


class TestSelectNeighbors:
    """Test cases for annulus sample selection."""

    def test_most_recent_first_and_capped(self):
        """Test ordering, the cap and exclusion of the steady window."""
        traj = settling_trajectory()
        eq = jacest.detect_equilibrium(traj, window_len=10)

        chosen = jacest.select_neighbors(traj, eq, eps_min=1e-6, r_max=0.5, n_max=5)

        assert chosen == sorted(chosen, reverse=True)
        assert len(chosen) == 5
        assert all(i < 60 for i in chosen)
        dist = np.linalg.norm(traj.states[chosen] - eq.x_ss, axis=1)
        assert np.all((dist >= 1e-6) & (dist <= 0.5))

    def test_too_few_samples(self):
        """Test that fewer samples than states raises InsufficientSamples."""
        traj = settling_trajectory()
        eq = jacest.detect_equilibrium(traj, window_len=10)

        with pytest.raises(InsufficientSamples):
            jacest.select_neighbors(traj, eq, eps_min=1e-6, r_max=0.02)

    def test_radii_must_be_ordered(self):
        """Test that eps_min must be below r_max."""
        traj = settling_trajectory()
        with pytest.raises(ValueError):
            jacest.select_neighbors(traj, ORIGIN, eps_min=0.5, r_max=0.1)


class TestPseudoInverse:
    """Test cases for the SVD pseudoinverse."""

    def test_matches_numpy(self):
        """Test against numpy's pinv for a full-rank wide matrix."""
        M = np.random.default_rng(1).normal(size=(2, 7))

        np.testing.assert_allclose(
            jacest.pseudo_inverse(M), np.linalg.pinv(M), atol=1e-12
        )

    def test_zero_matrix(self):
        """Test that the pseudoinverse of zero is zero with transposed shape."""
        P = jacest.pseudo_inverse(np.zeros((2, 3)))

        assert P.shape == (3, 2)
        assert np.all(P == 0)


class TestEstimateJacobian:
    """Test cases for the least-squares Jacobian."""

    def test_exact_derivatives_recover_a(self):
        """Test that noise-free linear data gives J_ref = A."""
        traj = cloud()
        derivatives = traj.states @ A.T

        est = jacest.estimate_jacobian(
            traj, ORIGIN, range(traj.n_samples), derivatives=derivatives
        )

        np.testing.assert_allclose(est.J_ref, A, atol=1e-10)
        assert est.n_samples == 40
        assert est.lsq_residual == pytest.approx(0.0, abs=1e-10)
        assert est.cond >= 1.0

    def test_simulated_linear_plant(self):
        """Test that the pipeline on a simulated decay recovers A closely."""
        plant = PlantModel.from_spec("linear", {"A": A.tolist(), "B": [[0.0], [1.0]]})
        traj = simulate(plant, [0.1, 0.1], InputSchedule.constant([0.0]), 0.01, 20.0)

        eq, est = jacest.extract(traj, r_max=1.0, n_max=5000)

        np.testing.assert_allclose(eq.x_ss, [0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(est.J_ref, A, atol=0.05)

    def test_collinear_deviations(self):
        """Test that deviations along one line raise RankDeficient."""
        states = np.outer(np.linspace(0.1, 1.0, 10), [1.0, 2.0])
        traj = Trajectory(0.1, states, np.zeros((10, 1)))

        with pytest.raises(RankDeficient):
            jacest.estimate_jacobian(traj, ORIGIN, range(10))

    def test_too_few_indices(self):
        """Test that one column cannot determine a 2x2 Jacobian."""
        with pytest.raises(InsufficientSamples):
            jacest.estimate_jacobian(cloud(), ORIGIN, [3])


    def test_neighbor_order_does_not_matter(self):
        """Test that shuffling the neighbor indices leaves J_ref unchanged."""
        traj = linear_decay()
        eq = jacest.detect_equilibrium(traj, window_len=100)
        indices = jacest.select_neighbors(traj, eq, eps_min=0.05, r_max=2.0)
        shuffled = np.random.default_rng(4).permutation(indices)

        first = jacest.estimate_jacobian(traj, eq, indices)
        second = jacest.estimate_jacobian(traj, eq, shuffled)

        np.testing.assert_allclose(second.J_ref, first.J_ref, rtol=1e-10, atol=1e-12)
        assert second.cond == pytest.approx(first.cond, rel=1e-10)


class TestDroopExtraction:
    """Test cases for extraction on the grid-forming droop plant."""

    def test_nominal_equilibrium(self):
        """Test the droop equilibrium at the nominal input."""
        _, x_ss, _ = droop_run(duration=0.01)

        np.testing.assert_allclose(x_ss, [math.asin(0.15), 0.5], atol=1e-10)

    @pytest.mark.parametrize("u", [(1.0, 1.0), (1.05, 0.99)])
    def test_near_equilibrium_start_recovers_jacobian(self, u):
        """Test x_ss and J_ref from a one-second run started near equilibrium."""
        plant, x_ss, traj = droop_run(u)

        eq, est = jacest.extract(traj, eps_min=1e-3)

        np.testing.assert_allclose(eq.x_ss, x_ss, atol=1e-3)
        J = plants.analytic_state_jacobian(plant, x_ss, list(u))
        error = np.linalg.norm(est.J_ref - J) / np.linalg.norm(J)
        assert error <= 0.05

    def test_run_without_equilibrium_never_settles(self):
        """Test that a drifting run at u = [0.5, 0.9] keeps a large residual."""
        plant = PlantModel.from_spec("gfm_droop", {})
        x0 = plants.find_equilibrium(plant, [1.0, 1.0], [0.0, 0.5])
        traj = simulate(plant, x0, InputSchedule.constant([0.5, 0.9]), 2e-4, 1.0)

        eq = jacest.detect_equilibrium(traj, traj.n_samples // 20)

        assert eq.residual > 1e-2


class TestErrorBound:
    """Test cases for the noise error bound."""

    def test_bound_holds_under_noise(self):
        """Test that ||J_ref - A||_2 never exceeds the bound."""
        rng = np.random.default_rng(2)
        clean = 0.2 * rng.normal(size=(60, 2))
        E_x = 0.002 * rng.normal(size=clean.shape)
        E_xdot = 0.01 * rng.normal(size=clean.shape)
        traj = Trajectory(0.01, clean + E_x, np.zeros((60, 1)))
        derivatives = clean @ A.T + E_xdot

        est = jacest.estimate_jacobian(traj, ORIGIN, range(60), derivatives=derivatives)
        bound = jacest.error_bound(
            est,
            sigma_x=float(np.max(np.linalg.norm(E_x, axis=1))),
            sigma_xdot=float(np.max(np.linalg.norm(E_xdot, axis=1))),
            jstar_norm=float(np.linalg.norm(A, 2)),
        )

        assert np.linalg.norm(est.J_ref - A, 2) <= bound.bound
        assert not bound.jstar_is_proxy

    def test_zero_noise_gives_zero_bound(self):
        """Test that noise-free data has a zero bound."""
        est = JacobianEstimate(A, 10, 3.0, 1.0, 0.0)

        assert jacest.error_bound(est, 0.0, 0.0, 5.0).bound == 0.0

    def test_formula(self):
        """Test the bound against its closed form."""
        est = JacobianEstimate(A, 16, 2.0, 0.5, 0.0)

        bound = jacest.error_bound(est, sigma_x=0.01, sigma_xdot=0.1, jstar_norm=3.0)

        assert bound.bound == pytest.approx(2.0 * 4.0 * (0.1 + 0.01 * 3.0) / 0.5)

    def test_proxy_norm(self):
        """Test that ||J_ref||_2 stands in for ||J_*|| when it is not given."""
        est = JacobianEstimate(A, 4, 2.0, 1.0, 0.0)

        bound = jacest.error_bound(est, 0.01, 0.0)

        assert bound.jstar_is_proxy
        assert bound.jstar_norm == pytest.approx(np.linalg.norm(A, 2))

    def test_negative_noise(self):
        """Test that a negative noise level is rejected."""
        est = JacobianEstimate(A, 4, 2.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            jacest.error_bound(est, -0.1, 0.0, 1.0)

    def test_infinite_condition_number(self):
        """Test that a singular estimate has no finite bound."""
        est = JacobianEstimate(A, 4, math.inf, 1.0, 0.0)
        with pytest.raises(UnboundedError):
            jacest.error_bound(est, 0.1, 0.1, 1.0)

    @pytest.mark.parametrize("sigma_index,sigma", enumerate([1e-4, 5e-4, 2e-3]))
    def test_bound_holds_on_simulated_realizations(self, sigma_index, sigma):
        """Test the bound over noisy realizations of a simulated decay."""
        clean = linear_decay()
        jstar_norm = float(np.linalg.norm(A, 2))
        for k in range(100):
            noisy = add_noise(clean, sigma, [sigma_index, k])
            eq = jacest.detect_equilibrium(noisy, noisy.n_samples // 20)
            idx = jacest.select_neighbors(noisy, eq, eps_min=0.05, r_max=2.0)
            est = jacest.estimate_jacobian(noisy, eq, idx)
            # deviations from the true equilibrium at the origin
            E_x = noisy.states[idx] - eq.x_ss - clean.states[idx]
            E_xdot = finite_diff(noisy)[idx] - clean.states[idx] @ A.T

            bound = jacest.error_bound(
                est,
                sigma_x=float(np.max(np.linalg.norm(E_x, axis=1))),
                sigma_xdot=float(np.max(np.linalg.norm(E_xdot, axis=1))),
                jstar_norm=jstar_norm,
            )

            assert np.linalg.norm(est.J_ref - A, 2) <= bound.bound * (1 + 1e-9)


class TestNoiseFiltering:
    """Test cases for extraction after zero-phase low-pass filtering."""

    @pytest.mark.parametrize("sigma", [1e-4, 5e-4, 2e-3])
    def test_filtering_lowers_median_error(self, sigma):
        """Test that filtered data gives a smaller median ||J_ref - A||_2."""
        clean = linear_decay()
        cutoff = default_cutoff(clean.dt)
        raw, filtered = [], []
        for k in range(11):
            noisy = add_noise(clean, sigma, [7, k])
            for errors, traj in (
                (raw, noisy),
                (filtered, zero_phase_lowpass(noisy, cutoff)),
            ):
                _, est = jacest.extract(traj, eps_min=0.05, r_max=2.0)
                errors.append(np.linalg.norm(est.J_ref - A, 2))

        assert np.median(filtered) <= np.median(raw)


class TestDerivativeNoiseLevel:
    """Test cases for differenced-noise levels."""

    def test_central(self):
        """Test sqrt(2) sigma / (2 dt) for central differences."""
        assert jacest.derivative_noise_level(0.01, 0.1) == pytest.approx(
            math.sqrt(2) * 0.05
        )

    def test_forward(self):
        """Test sqrt(2) sigma / dt for forward differences."""
        assert jacest.derivative_noise_level(0.01, 0.1, "forward") == pytest.approx(
            math.sqrt(2) * 0.1
        )

    def test_invalid_dt(self):
        """Test that dt must be positive."""
        with pytest.raises(ValueError):
            jacest.derivative_noise_level(0.01, 0.0)
