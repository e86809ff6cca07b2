"""
Trajectory data model.

A ``Trajectory`` is a uniformly sampled state/input time series and the unit
of every ingestion, processing and prediction step. ``Dataset`` groups
trajectories sharing dimensions with optional normalization statistics.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import DimensionError, TooShort


def _frozen(array, what: str) -> np.ndarray:
    out = np.array(array, dtype=float, ndmin=2, copy=True)
    if out.ndim != 2:
        raise DimensionError(what, "(N, d)", out.shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled states (N x d_x) and inputs (N x d_u)."""

    dt: float
    states: np.ndarray
    inputs: np.ndarray
    t0: float = 0.0
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        states = _frozen(self.states, "states")
        inputs = _frozen(self.inputs, "inputs")
        if states.shape[0] < 2:
            raise TooShort(states.shape[0], 2)
        if inputs.shape[0] != states.shape[0]:
            raise DimensionError(
                "inputs", (states.shape[0], inputs.shape[1]), inputs.shape
            )
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(inputs))):
            raise ValueError("trajectory values must be finite")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    @property
    def truncated(self) -> bool:
        return bool(self.meta.get("truncated", False))

    def with_states(self, states, **meta) -> "Trajectory":
        """Copy with replaced states and extra metadata."""
        return replace(self, states=states, meta={**self.meta, **meta})

    def with_meta(self, **meta) -> "Trajectory":
        return replace(self, meta={**self.meta, **meta})


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics plus the time scale of normalized time."""

    state_mean: np.ndarray
    state_std: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray
    time_scale: float = 1.0

    def __post_init__(self):
        for name in ("state_mean", "state_std", "input_mean", "input_std"):
            value = np.array(getattr(self, name), dtype=float).ravel()
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if np.any(self.state_std <= 0) or np.any(self.input_std <= 0):
            raise ValueError("normalization std entries must be > 0")
        if self.state_mean.shape != self.state_std.shape:
            raise DimensionError(
                "state_std", self.state_mean.shape, self.state_std.shape
            )
        if self.input_mean.shape != self.input_std.shape:
            raise DimensionError(
                "input_std", self.input_mean.shape, self.input_std.shape
            )
        if not self.time_scale > 0:
            raise ValueError("time_scale must be > 0")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "state_mean": self.state_mean.tolist(),
            "state_std": self.state_std.tolist(),
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "time_scale": self.time_scale,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormStats":
        return cls(
            state_mean=data["state_mean"],
            state_std=data["state_std"],
            input_mean=data["input_mean"],
            input_std=data["input_std"],
            time_scale=data.get("time_scale", 1.0),
        )


@dataclass(frozen=True)
class Dataset:
    """Ordered trajectories sharing d_x and d_u."""

    trajectories: List[Trajectory]
    norm: Optional[NormStats] = None
    manifest: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        trajectories = list(self.trajectories)
        if trajectories:
            d_x, d_u = trajectories[0].state_dim, trajectories[0].input_dim
            for i, traj in enumerate(trajectories):
                if (traj.state_dim, traj.input_dim) != (d_x, d_u):
                    raise DimensionError(
                        f"trajectory {i}", (d_x, d_u), (traj.state_dim, traj.input_dim)
                    )
        object.__setattr__(self, "trajectories", trajectories)
        object.__setattr__(self, "manifest", dict(self.manifest))

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].state_dim

    @property
    def input_dim(self) -> int:
        return self.trajectories[0].input_dim


class InputSchedule:
    """Piecewise-constant input u(t): ``values[i]`` holds on [times[i], times[i+1]).

    Before ``times[0]`` the first value holds.
    """

    def __init__(self, times: Sequence[float], values):
        self.times = np.asarray(times, dtype=float).ravel()
        self.values = np.array(values, dtype=float, ndmin=2)
        if self.values.shape[0] != self.times.shape[0]:
            raise DimensionError(
                "schedule values", (self.times.shape[0], "d_u"), self.values.shape
            )
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("schedule switch times must be increasing")

    @classmethod
    def constant(cls, u) -> "InputSchedule":
        return cls([0.0], [np.asarray(u, dtype=float).ravel()])

    @classmethod
    def step(cls, u_before, u_after, t_step: float = 0.0) -> "InputSchedule":
        """Hold ``u_before`` until ``t_step``, then ``u_after``."""
        before = np.asarray(u_before, dtype=float).ravel()
        after = np.asarray(u_after, dtype=float).ravel()
        return cls([-np.inf, t_step], [before, after])

    @property
    def input_dim(self) -> int:
        return self.values.shape[1]

    def value_at(self, t) -> np.ndarray:
        """Input at time(s) ``t``; right-continuous at switch times."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(idx, 0, len(self.times) - 1)]

    def breakpoints(self, t_start: float, t_end: float) -> List[float]:
        """Switch times strictly inside (t_start, t_end)."""
        return [float(t) for t in self.times if t_start < t < t_end]

    def mapped(self, fn) -> "InputSchedule":
        """Schedule with ``fn`` applied to every value row."""
        return InputSchedule(self.times, np.array([fn(v) for v in self.values]))
