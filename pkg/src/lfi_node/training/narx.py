"""
Discrete NARX-style baseline: an MLP mapping [x_k, u_k] straight to x_{k+1}
at the sample period it was trained on.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, Tuple

import numpy as np

from ..core.exceptions import DimensionError, FormatError
from ..neuralfield import MlpParams, backward, forward, forward_with_cache, init
from ..signals.trajectory import Dataset
from .log import TrainLog
from .trainer import TrainConfig, TrainMode, _uniform_dt, layer_dims_for, run_loop
from .windows import sample_windows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NarxModel:
    params: MlpParams
    dt: float

    def __post_init__(self):
        if self.params.layer_dims[0] != self.params.state_dim + self.params.input_dim:
            raise DimensionError(
                "NARX input layer", "d_x + d_u", self.params.layer_dims[0]
            )
        if not self.dt > 0:
            raise ValueError("NARX dt must be > 0")

    @property
    def state_dim(self) -> int:
        return self.params.state_dim

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    def step(self, z, u_n) -> np.ndarray:
        """One map application in normalized units."""
        return forward(self.params, z, u_n)

    @classmethod
    def from_params(cls, params: MlpParams, source: str = "<memory>") -> "NarxModel":
        dt = params.train_config_echo.get("dt")
        if dt is None:
            raise FormatError(source, "NARX model lacks its training dt")
        return cls(params, float(dt))

    def echo(self) -> Dict[str, Any]:
        return self.params.train_config_echo


def one_step_loss_and_grad(params: MlpParams, Z, targets):
    """Mean over samples of ||g(z_k) - x_{k+1}||^2 and its gradient."""
    out, cache = forward_with_cache(params, Z)
    r = out - targets
    n = r.shape[0]
    loss = float(np.sum(r * r) / n)
    grads, _ = backward(params, cache, 2.0 * r / n)
    return loss, grads


def train_narx(dataset: Dataset, config: TrainConfig) -> Tuple[NarxModel, TrainLog]:
    """Fit the one-step map on random (x_k, u_k) -> x_{k+1} samples.

    Each iteration draws batch_size * window_len samples, so the sample budget
    matches the neural ODE's. The L_jac column is logged as 0.
    """
    config.validate()
    d_x, d_u = dataset.state_dim, dataset.input_dim
    dt = _uniform_dt(dataset)
    rng = np.random.default_rng(config.seed)
    dims = layer_dims_for(d_x, d_u, config.hidden)
    params = init(dims, config.activation, config.seed)
    n_samples = config.batch_size * int(config.window_len)

    def step(params: MlpParams, rng: np.random.Generator):
        picks = sample_windows(dataset, 1, n_samples, rng)
        pairs = [(dataset.trajectories[t], s) for t, s in picks]
        Z = np.array([np.concatenate([tr.states[s], tr.inputs[s]]) for tr, s in pairs])
        targets = np.array([tr.states[s + 1] for tr, s in pairs])
        loss, grads = one_step_loss_and_grad(params, Z, targets)
        if not math.isfinite(loss):
            return loss, 0.0, None
        return loss, 0.0, grads.scaled(config.lambda1)

    logger.info(f"Training narx: {len(dataset)} trajectories, {n_samples} samples/iter")
    params, log = run_loop(params, config, step, rng)
    final = log.final
    echo = {
        **config.to_dict(),
        "mode": TrainMode.NARX.value,
        "lambda2": 0.0,
        "dt": dt,
        "data_dt": dt,
        "final": {"L_data": final.L_data, "L_jac": 0.0, "L_total": final.L_total},
    }
    params = replace(params, norm=dataset.norm, train_config_echo=echo)
    return NarxModel(params, dt), log
