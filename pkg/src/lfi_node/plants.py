"""
Ground-truth synthetic plants with closed-form dynamics.

Three plants stand in for the black-box system: a linear state-space model
(exact oracle), the forced Van der Pol oscillator, and a reduced grid-forming
inverter with P-f droop and a first-order power filter (per-unit). Each plant
provides its vector field, the exact state and input Jacobians, and Newton
equilibrium search, so every learned quantity can be checked against a
closed form.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Union

import numpy as np

from .core.exceptions import ConfigError, DimensionError, NoEquilibrium

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_STEPS = 50


class PlantKind(Enum):
    """Available plant families."""

    LINEAR = "linear"
    VAN_DER_POL = "vanderpol"
    GFM_DROOP = "gfm_droop"


@dataclass(frozen=True)
class LinearParams:
    """x' = A x + B u."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float, ndmin=2)
        if A.shape[0] != A.shape[1]:
            raise ConfigError("plant.params.A", f"must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ConfigError(
                "plant.params.B", f"must have {A.shape[0]} rows, got {B.shape[0]}"
            )
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class VanDerPolParams:
    """x1' = x2, x2' = mu (1 - x1^2) x2 - x1 + u."""

    mu: float = 1.0


@dataclass(frozen=True)
class GfmDroopParams:
    """Reduced droop-controlled grid-forming inverter, per-unit.

    State x = [delta, P_f], input u = [V_g, omega_g]:
        delta' = omega_set + m (P_ref - P_f) - omega_g
        P_f'   = ((E V_g / X) sin(delta) - P_f) / T
    """

    E: float = 1.0
    X: float = 0.3
    m: float = 0.05
    T: float = 0.02
    omega_set: float = 1.0
    P_ref: float = 0.5

    def __post_init__(self):
        for name in ("E", "X", "m", "T"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"plant.params.{name}", "must be > 0")


PlantParams = Union[LinearParams, VanDerPolParams, GfmDroopParams]


@dataclass(frozen=True)
class PlantModel:
    """An immutable plant: its kind and kind-specific parameters."""

    kind: PlantKind
    params: PlantParams = field(default=None)

    def __post_init__(self):
        expected = {
            PlantKind.LINEAR: LinearParams,
            PlantKind.VAN_DER_POL: VanDerPolParams,
            PlantKind.GFM_DROOP: GfmDroopParams,
        }[self.kind]
        if self.params is None:
            if self.kind is PlantKind.LINEAR:
                raise ConfigError("plant.params", "linear plant needs A and B")
            object.__setattr__(self, "params", expected())
        if not isinstance(self.params, expected):
            raise ConfigError(
                "plant.params",
                f"{self.kind.value} plant needs {expected.__name__}",
            )
        values = [
            np.asarray(v, dtype=float) for v in vars(self.params).values()
        ]
        if not all(np.all(np.isfinite(v)) for v in values):
            raise ConfigError("plant.params", "all parameters must be finite")

    @property
    def state_dim(self) -> int:
        if self.kind is PlantKind.LINEAR:
            return self.params.A.shape[0]
        return 2

    @property
    def input_dim(self) -> int:
        if self.kind is PlantKind.LINEAR:
            return self.params.B.shape[1]
        if self.kind is PlantKind.VAN_DER_POL:
            return 1
        return 2

    @classmethod
    def from_spec(cls, kind: str, params: Dict[str, Any]) -> "PlantModel":
        """Build a plant from a config section (kind name + parameter map)."""
        try:
            plant_kind = PlantKind(kind)
        except ValueError:
            valid = [k.value for k in PlantKind]
            raise ConfigError("plant.kind", f"'{kind}' must be one of {valid}")
        params = dict(params or {})
        try:
            if plant_kind is PlantKind.LINEAR:
                return cls(plant_kind, LinearParams(params["A"], params["B"]))
            if plant_kind is PlantKind.VAN_DER_POL:
                return cls(plant_kind, VanDerPolParams(**params))
            return cls(plant_kind, GfmDroopParams(**params))
        except (KeyError, TypeError) as e:
            raise ConfigError("plant.params", f"bad parameter set: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        params = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in vars(self.params).items()
        }
        return {"kind": self.kind.value, "params": params}


def _check(plant: PlantModel, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (plant.state_dim,):
        raise DimensionError("state x", (plant.state_dim,), x.shape)
    if u.shape != (plant.input_dim,):
        raise DimensionError("input u", (plant.input_dim,), u.shape)
    return x, u


def derivative(plant: PlantModel, x, u) -> np.ndarray:
    """Evaluate f(x, u)."""
    x, u = _check(plant, x, u)
    p = plant.params
    if plant.kind is PlantKind.LINEAR:
        return p.A @ x + p.B @ u
    if plant.kind is PlantKind.VAN_DER_POL:
        return np.array([x[1], p.mu * (1.0 - x[0] ** 2) * x[1] - x[0] + u[0]])
    delta, p_f = x
    v_g, omega_g = u
    return np.array(
        [
            p.omega_set + p.m * (p.P_ref - p_f) - omega_g,
            ((p.E * v_g / p.X) * math.sin(delta) - p_f) / p.T,
        ]
    )


def analytic_state_jacobian(plant: PlantModel, x, u) -> np.ndarray:
    """Exact df/dx."""
    x, u = _check(plant, x, u)
    p = plant.params
    if plant.kind is PlantKind.LINEAR:
        return np.array(p.A)
    if plant.kind is PlantKind.VAN_DER_POL:
        return np.array(
            [
                [0.0, 1.0],
                [-2.0 * p.mu * x[0] * x[1] - 1.0, p.mu * (1.0 - x[0] ** 2)],
            ]
        )
    return np.array(
        [
            [0.0, -p.m],
            [p.E * u[0] * math.cos(x[0]) / (p.X * p.T), -1.0 / p.T],
        ]
    )


def analytic_input_jacobian(plant: PlantModel, x, u) -> np.ndarray:
    """Exact df/du."""
    x, u = _check(plant, x, u)
    p = plant.params
    if plant.kind is PlantKind.LINEAR:
        return np.array(p.B)
    if plant.kind is PlantKind.VAN_DER_POL:
        return np.array([[0.0], [1.0]])
    return np.array(
        [
            [0.0, -1.0],
            [p.E * math.sin(x[0]) / (p.X * p.T), 0.0],
        ]
    )


def find_equilibrium(plant: PlantModel, u, x_guess) -> np.ndarray:
    """Newton iteration on f(x, u) = 0 from ``x_guess``.

    Raises:
        NoEquilibrium: on divergence, a singular Jacobian, or when the step
            cap is exhausted before ||f|| <= NEWTON_TOL.
    """
    x, u = _check(plant, x_guess, u)
    if not np.all(np.isfinite(x)):
        raise ValueError("x_guess must be finite")
    x = x.copy()
    residual = math.inf
    for step in range(NEWTON_MAX_STEPS + 1):
        f = derivative(plant, x, u)
        residual = float(np.linalg.norm(f))
        if not np.isfinite(residual):
            raise NoEquilibrium("Newton iterate diverged", step, residual)
        if residual <= NEWTON_TOL:
            logger.debug(f"Newton converged in {step} steps, residual {residual:.2e}")
            return x
        if step == NEWTON_MAX_STEPS:
            break
        try:
            x = x - np.linalg.solve(analytic_state_jacobian(plant, x, u), f)
        except np.linalg.LinAlgError:
            raise NoEquilibrium("singular Jacobian", step, residual)
    raise NoEquilibrium("step cap exhausted", NEWTON_MAX_STEPS, residual)
