"""Forecasts from trained models in physical units."""

import logging
import math
from typing import Optional, Union

import numpy as np

from ..core.exceptions import DtMismatch, IntegrationFailure
from ..integrate import IntegratorConfig, solve_adaptive
from ..neuralfield import MlpParams, forward, load_model
from ..signals.processing import apply_normalization
from ..signals.trajectory import InputSchedule, NormStats, Trajectory
from .narx import NarxModel
from .trainer import TrainMode

logger = logging.getLogger(__name__)

Model = Union[MlpParams, NarxModel]

DT_TOLERANCE = 1e-9


def load_trained(path) -> Model:
    """Model file -> MlpParams, or NarxModel when it was trained as one."""
    params = load_model(path)
    if params.train_config_echo.get("mode") == TrainMode.NARX.value:
        return NarxModel.from_params(params, str(path))
    return params


def _norm_of(model: Model) -> NormStats:
    params = model.params if isinstance(model, NarxModel) else model
    if params.norm is None:
        raise ValueError("model carries no normalization statistics")
    return params.norm


def _normalized_schedule(schedule: InputSchedule, norm: NormStats) -> InputSchedule:
    return InputSchedule(
        schedule.times / norm.time_scale,
        (schedule.values - norm.input_mean) / norm.input_std,
    )


def predict(
    model: Model,
    x0,
    schedule: InputSchedule,
    duration: float,
    dt: Optional[float] = None,
    integrator: Optional[IntegratorConfig] = None,
) -> Trajectory:
    """Forecast from x0 under ``schedule`` over [0, duration), physical units.

    Neural ODE models are solved adaptively in normalized space; NARX models
    iterate their map and only run at their training sample period.

    Raises:
        IntegrationFailure: carrying the denormalized partial trajectory.
        DtMismatch: for a NARX model asked for another sample period.
    """
    norm = _norm_of(model)
    x0 = np.asarray(x0, dtype=float)
    z0 = (x0 - norm.state_mean) / norm.state_std
    sched_n = _normalized_schedule(schedule, norm)
    span = duration / norm.time_scale
    try:
        if isinstance(model, NarxModel):
            dt_n = model.dt if dt is None else dt / norm.time_scale
            if abs(dt_n - model.dt) > DT_TOLERANCE * model.dt:
                raise DtMismatch(dt_n * norm.time_scale, model.dt * norm.time_scale)
            traj_n = _iterate_map(model, z0, sched_n, span, model.dt)
        else:
            if dt is None:
                data_dt = model.train_config_echo.get("data_dt", span / 100)
                dt = data_dt * norm.time_scale

            def field(z, u):
                return forward(model, z, u)

            traj_n = solve_adaptive(
                field, z0, sched_n, (0.0, span), integrator, dt / norm.time_scale
            )
    except IntegrationFailure as e:
        partial = e.partial
        if partial is not None:
            partial = apply_normalization(partial, norm, "inverse")
        t_reached = e.t_reached * norm.time_scale
        raise IntegrationFailure(t_reached, e.reason, partial) from e
    return apply_normalization(traj_n, norm, "inverse")


def _iterate_map(model: NarxModel, z0, schedule: InputSchedule, span: float, dt: float):
    n = int(round(span / dt))
    if n < 2:
        raise ValueError("duration must cover at least two samples")
    times = dt * np.arange(n)
    inputs = schedule.value_at(times)
    states = np.empty((n, z0.size))
    states[0] = z0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n):
            states[k] = model.step(states[k - 1], inputs[k - 1])
            if not np.all(np.isfinite(states[k])):
                partial = None
                if k >= 2:
                    partial = Trajectory(
                        dt, states[:k], inputs[:k], meta={"truncated": True}
                    )
                raise IntegrationFailure(times[k], "NARX map diverged", partial)
    return Trajectory(dt, states, inputs)


def rmse(predicted: Trajectory, reference: Trajectory, scale=None) -> float:
    """Root mean square state error over the overlapping samples.

    ``scale`` divides each state channel first (pass state_std for
    normalized units).
    """
    n = min(predicted.n_samples, reference.n_samples)
    diff = predicted.states[:n] - reference.states[:n]
    if scale is not None:
        diff = diff / np.asarray(scale, dtype=float)
    return float(math.sqrt(np.mean(diff * diff)))
