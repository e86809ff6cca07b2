"""
Trajectory processing: simulation, sensor noise, zero-phase filtering, finite
differencing, downsampling and z-score normalization.
"""

import logging
from typing import Optional

import numpy as np
from scipy import signal

from ..core.exceptions import CutoffError, IntegrationFailure, TooShort
from .trajectory import Dataset, InputSchedule, NormStats, Trajectory

logger = logging.getLogger(__name__)

FILTER_ORDER = 2


def simulate(
    plant,
    x0,
    input_fn: InputSchedule,
    dt: float,
    duration: float,
    config=None,
) -> Trajectory:
    """Integrate the true plant with the adaptive solver on a uniform grid.

    Raises:
        IntegrationFailure: with the partial trajectory (meta ``truncated``).
    """
    from .. import integrate, plants

    if not dt > 0:
        raise ValueError("dt must be > 0")
    if duration < 2 * dt:
        raise ValueError("duration must cover at least two samples")
    x0 = np.asarray(x0, dtype=float)
    plants.derivative(plant, x0, input_fn.value_at(0.0))

    def field(x, u):
        return plants.derivative(plant, x, u)

    traj = integrate.solve_adaptive(field, x0, input_fn, (0.0, duration), config, dt)
    return traj.with_meta(plant=plant.kind.value)


def add_noise(traj: Trajectory, sigma_x: float, seed) -> Trajectory:
    """Add i.i.d. Gaussian(0, sigma_x^2) noise to every state entry."""
    if sigma_x < 0:
        raise ValueError("sigma_x must be >= 0")
    if sigma_x == 0:
        return traj.with_meta(sigma_x=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    noisy = traj.states + rng.normal(0.0, sigma_x, size=traj.states.shape)
    return traj.with_states(noisy, sigma_x=float(sigma_x), seed=seed)


def default_cutoff(dt: float) -> float:
    """Nyquist / 50."""
    return 0.5 / dt / 50.0


def zero_phase_lowpass(traj: Trajectory, cutoff_hz: float) -> Trajectory:
    """Second-order Butterworth section run forward then backward on each state."""
    nyquist = 0.5 / traj.dt
    if not 0 < cutoff_hz < nyquist:
        raise CutoffError(cutoff_hz, nyquist)
    sos = signal.butter(
        FILTER_ORDER, cutoff_hz, btype="low", fs=1.0 / traj.dt, output="sos"
    )
    padlen = min(3 * (2 * len(sos) + 1), traj.n_samples - 1)
    filtered = signal.sosfiltfilt(sos, traj.states, axis=0, padlen=padlen)
    return traj.with_states(filtered, cutoff_hz=float(cutoff_hz))


def finite_diff(traj: Trajectory, scheme: str = "central") -> np.ndarray:
    """State derivatives: central differences inside, one-sided at the ends.

    ``scheme="forward"`` uses (x[k+1] - x[k]) / dt with a backward difference
    at the last sample.
    """
    x = traj.states
    if traj.n_samples < 3:
        raise TooShort(traj.n_samples, 3)
    if scheme == "central":
        return np.gradient(x, traj.dt, axis=0, edge_order=1)
    if scheme == "forward":
        d = np.empty_like(x)
        d[:-1] = (x[1:] - x[:-1]) / traj.dt
        d[-1] = d[-2]
        return d
    raise ValueError(f"unknown difference scheme '{scheme}'")


def downsample(traj: Trajectory, factor: int) -> Trajectory:
    """Keep every ``factor``-th sample."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return traj
    kept = traj.states[::factor]
    if kept.shape[0] < 2:
        raise TooShort(traj.n_samples // factor, 2, "downsampled trajectory")
    return Trajectory(
        traj.dt * factor,
        kept,
        traj.inputs[::factor],
        t0=traj.t0,
        meta={**traj.meta, "downsample": factor},
    )


def fit_normalization(dataset: Dataset, time_scale: float = 1.0) -> NormStats:
    """Pooled per-channel mean/std; zero-variance channels get std 1."""
    states = np.concatenate([t.states for t in dataset.trajectories])
    inputs = np.concatenate([t.inputs for t in dataset.trajectories])
    state_std = states.std(axis=0)
    input_std = inputs.std(axis=0)
    return NormStats(
        state_mean=states.mean(axis=0),
        state_std=np.where(state_std > 0, state_std, 1.0),
        input_mean=inputs.mean(axis=0),
        input_std=np.where(input_std > 0, input_std, 1.0),
        time_scale=time_scale,
    )


def apply_normalization(
    traj: Trajectory, stats: NormStats, direction: str = "forward"
) -> Trajectory:
    """z = (v - mean) / std per channel and t' = t / time_scale (or the inverse)."""
    if direction == "forward":
        return Trajectory(
            traj.dt / stats.time_scale,
            (traj.states - stats.state_mean) / stats.state_std,
            (traj.inputs - stats.input_mean) / stats.input_std,
            t0=traj.t0 / stats.time_scale,
            meta={**traj.meta, "normalized": True},
        )
    if direction == "inverse":
        return Trajectory(
            traj.dt * stats.time_scale,
            traj.states * stats.state_std + stats.state_mean,
            traj.inputs * stats.input_std + stats.input_mean,
            t0=traj.t0 * stats.time_scale,
            meta={**traj.meta, "normalized": False},
        )
    raise ValueError(f"direction must be 'forward' or 'inverse', got '{direction}'")


def normalize_dataset(dataset: Dataset, stats: Optional[NormStats] = None) -> Dataset:
    """Forward-normalize every trajectory, fitting stats when none are given."""
    stats = stats or dataset.norm or fit_normalization(dataset)
    return Dataset(
        [apply_normalization(t, stats) for t in dataset.trajectories],
        norm=stats,
        manifest=dataset.manifest,
    )


def simulate_or_partial(plant, x0, schedule, dt, duration, config=None):
    """``simulate`` that returns (trajectory or None, failure or None)."""
    try:
        return simulate(plant, x0, schedule, dt, duration, config), None
    except IntegrationFailure as e:
        return e.partial, e
