"""
Numerical integration of true and learned vector fields.

``solve_adaptive`` is a Dormand-Prince 5(4) embedded pair with PI step
control and dense output, used for simulation and evaluation. ``step_rk4``
and ``rollout_window`` are the fixed-step classical Runge-Kutta path used in
training; the rollout can record every stage so the trajectory loss is
differentiated exactly through the discrete steps.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from .core.exceptions import IntegrationFailure, NonFiniteState
from .neuralfield import ForwardCache, MlpParams, forward_with_cache
from .signals.trajectory import InputSchedule, Trajectory

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Method(Enum):
    RK4_FIXED = "rk4_fixed"
    RK45_ADAPTIVE = "rk45_adaptive"


@dataclass(frozen=True)
class IntegratorConfig:
    method: Method = Method.RK45_ADAPTIVE
    h: Optional[float] = None
    rtol: float = 1e-7
    atol: float = 1e-9
    max_steps: int = 200_000

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.method is Method.RK4_FIXED and not (self.h and self.h > 0):
            raise ValueError("rk4_fixed needs a step h > 0")
        if not 0 < self.rtol < 1:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.atol < 0:
            raise ValueError("atol must be >= 0")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be > 0")


# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# continuous extension: y(t + th*h) = y + h * K^T P [th, th^2, th^3, th^4]
_P = np.array(
    [
        [
            1,
            -8048581381 / 2820520608,
            8663915743 / 2820520608,
            -12715105075 / 11282082432,
        ],
        [0, 0, 0, 0],
        [
            0,
            131558114200 / 32700410799,
            -68118460800 / 10900136933,
            87487479700 / 32700410799,
        ],
        [
            0,
            -1754552775 / 470086768,
            14199869525 / 1410260304,
            -10690763975 / 1880347072,
        ],
        [
            0,
            127303824393 / 49829197408,
            -318862633887 / 49829197408,
            701980252875 / 199316789632,
        ],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
PI_ALPHA = 0.7 / 5
PI_BETA = 0.4 / 5


def step_rk4(field: Field, x, u, h: float) -> np.ndarray:
    """One classical RK4 step with u held over the step."""
    if not h > 0:
        raise ValueError("h must be > 0")
    x = np.asarray(x, dtype=float)
    k1 = field(x, u)
    k2 = field(x + 0.5 * h * k1, u)
    k3 = field(x + 0.5 * h * k2, u)
    k4 = field(x + h * k3, u)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState(0)
    return x_next


def _fixed_steps(field, x, schedule: InputSchedule, t0: float, t1: float, h: float):
    """RK4 from t0 to t1 in equal steps no longer than h, split at input switches."""
    edges = [t0] + schedule.breakpoints(t0, t1) + [t1]
    for a, b in zip(edges[:-1], edges[1:]):
        u = schedule.value_at(a)
        n = max(1, int(np.ceil((b - a) / h - 1e-9)))
        for _ in range(n):
            x = step_rk4(field, x, u, (b - a) / n)
    return x


def _rms(err, x, x_new, config: IntegratorConfig) -> float:
    scale = config.atol + config.rtol * np.maximum(np.abs(x), np.abs(x_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(field, x, u, f0, config, span) -> float:
    scale = config.atol + config.rtol * np.abs(x)
    d0 = np.sqrt(np.mean((x / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = field(x + h0 * f0, u)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def solve_adaptive(
    field: Field,
    x0,
    schedule: InputSchedule,
    t_span: Tuple[float, float],
    config: Optional[IntegratorConfig] = None,
    dt: Optional[float] = None,
) -> Trajectory:
    """Integrate x' = field(x, u(t)) and sample on the uniform grid t0 + k*dt.

    Input switch times are step boundaries. The grid holds
    round((t_end - t0) / dt) samples, the first being x0.
    With ``method=rk4_fixed`` the same grid is filled by classical RK4 steps
    no longer than ``config.h``.

    Raises:
        IntegrationFailure: when the step size underflows or ``max_steps`` is
            exhausted; ``partial`` holds the samples produced so far (tagged
            truncated) when there are at least two.
    """
    config = config or IntegratorConfig()
    t_start, t_end = float(t_span[0]), float(t_span[1])
    if not t_end > t_start:
        raise ValueError("t_span must be increasing")
    dt = dt if dt is not None else (t_end - t_start) / 100
    n_samples = int(round((t_end - t_start) / dt))
    if n_samples < 2:
        raise ValueError("t_span must cover at least two samples")
    grid = t_start + dt * np.arange(n_samples)
    x = np.array(x0, dtype=float).ravel()
    out = np.empty((n_samples, x.size))
    out[0] = x
    filled = 1

    def fail(t, reason, filled):
        partial = None
        if filled >= 2:
            partial = Trajectory(
                dt,
                out[:filled],
                schedule.value_at(grid[:filled]),
                t0=t_start,
                meta={"truncated": True, "t_reached": t},
            )
        logger.warning(f"Solve failed at t={t:.6g}: {reason}")
        return IntegrationFailure(t, reason, partial)

    if config.method is Method.RK4_FIXED:
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(1, n_samples):
                try:
                    x = _fixed_steps(field, x, schedule, grid[i - 1], grid[i], config.h)
                except NonFiniteState:
                    raise fail(grid[i - 1], "non-finite state", i)
                out[i] = x
        return Trajectory(dt, out, schedule.value_at(grid), t0=t_start)

    edges = [t_start] + schedule.breakpoints(t_start, t_end) + [t_end]
    n_steps = 0
    h = None
    with np.errstate(over="ignore", invalid="ignore"):
        for seg_start, seg_end in zip(edges[:-1], edges[1:]):
            u = schedule.value_at(seg_start)
            t = seg_start
            K = np.empty((7, x.size))
            K[0] = field(x, u)
            if h is None:
                h = _initial_step(field, x, u, K[0], config, seg_end - seg_start)
            err_prev = 1e-4
            while t < seg_end:
                h = min(h, seg_end - t)
                if h < 10 * np.finfo(float).eps * max(abs(t), 1.0):
                    raise fail(t, "step size underflow", filled)
                n_steps += 1
                if n_steps > config.max_steps:
                    raise fail(t, f"max_steps={config.max_steps} exhausted", filled)
                for s in range(1, 7):
                    K[s] = field(x + h * (np.dot(_A[s], K[:s])), u)
                x_new = x + h * (_B @ K)
                err = _rms(h * (_E @ K), x, x_new, config)
                if not (np.isfinite(err) and np.all(np.isfinite(x_new))):
                    h *= MIN_FACTOR
                    continue
                if err > 1.0:
                    h *= max(MIN_FACTOR, SAFETY * err ** (-1 / 5))
                    continue
                t_new = t + h
                if seg_end - t_new <= 1e-12 * max(abs(seg_end), 1.0):
                    t_new = seg_end
                # dense output for grid points in (t, t_new]
                stop = int(np.searchsorted(grid, t_new, side="right"))
                if stop > filled:
                    theta = (grid[filled:stop] - t) / h
                    powers = np.cumprod(np.repeat(theta[:, None], 4, axis=1), axis=1)
                    Q = K.T @ _P
                    out[filled:stop] = x + h * powers @ Q.T
                    filled = stop
                factor = (
                    MAX_FACTOR
                    if err == 0
                    else SAFETY * err ** (-PI_ALPHA) * err_prev**PI_BETA
                )
                h *= min(MAX_FACTOR, max(MIN_FACTOR, factor))
                err_prev = max(err, 1e-4)
                t, x = t_new, x_new
                K[0] = K[6]
            # next segment restarts from a field evaluation at the new input
    logger.debug(f"Adaptive solve finished in {n_steps} steps")
    return Trajectory(dt, out, schedule.value_at(grid), t0=t_start)


@dataclass
class RolloutTape:
    """Stage caches of a recorded rollout, one 4-tuple per RK4 step."""

    h: float
    steps: List[Tuple[ForwardCache, ...]] = field(default_factory=list)


def _field_stage(params: MlpParams, X, U):
    return forward_with_cache(params, np.concatenate([X, U], axis=1))


def rollout_window(
    params: MlpParams,
    x0,
    inputs,
    h: float,
    record_gradients: bool = False,
) -> Tuple[np.ndarray, Optional[RolloutTape]]:
    """K fixed RK4 steps of f_NN from x0 under per-step inputs.

    ``x0`` may be a vector (inputs K x d_u, output K x d_x) or a batch of
    rows (inputs B x K x d_u, output B x K x d_x).

    Raises:
        NonFiniteState: listing the batch rows whose states became non-finite.
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    X = np.atleast_2d(x0)
    U = np.asarray(inputs, dtype=float)
    if single:
        U = U.reshape(1, -1, params.input_dim)
    B, K = X.shape[0], U.shape[1]
    if K < 1:
        raise ValueError("rollout needs at least one step")
    tape = RolloutTape(h) if record_gradients else None
    preds = np.empty((B, K, X.shape[1]))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            u = U[:, k]
            k1, c1 = _field_stage(params, X, u)
            k2, c2 = _field_stage(params, X + 0.5 * h * k1, u)
            k3, c3 = _field_stage(params, X + 0.5 * h * k2, u)
            k4, c4 = _field_stage(params, X + h * k3, u)
            X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
            if bad.size:
                raise NonFiniteState(k, bad.tolist())
            preds[:, k] = X
            if tape is not None:
                tape.steps.append((c1, c2, c3, c4))
    return (preds[0] if single else preds), tape
