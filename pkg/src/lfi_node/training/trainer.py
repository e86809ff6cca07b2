"""
Training loop for the neural vector field.

Each iteration draws a batch of windows, rolls them out with fixed-step RK4
while recording every stage, and takes one Adam step on
lambda1 * grad(L_data) + lambda2 * grad(L_jac). The loop itself is shared with
the NARX baseline through ``run_loop``.

With ``jac_scale="relative"`` (the default) each feature's squared Frobenius
error is divided by max(||J_ref||_F^2, 1), so L_jac stays O(1) whatever the
scale of the data-derived Jacobians.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ConfigError, NonConvergence, NonFiniteState
from ..integrate import rollout_window
from ..neuralfield import (
    DEFAULT_HIDDEN,
    MlpParams,
    ParamGradient,
    grad_forward_loss,
    init,
    jac_loss_and_grad_batch,
    relative_jac_weights,
)
from ..signals.trajectory import Dataset
from .latent import LatentReport, precompute_latent_features
from .log import TrainLog, TrainRecord
from .losses import total_loss
from .optimizer import AdamState, adam_step
from .windows import gather_windows, sample_windows

logger = logging.getLogger(__name__)

MAX_NONFINITE = 10
JAC_SCALES = ("relative", "absolute")


class TrainMode(Enum):
    LFI = "lfi"
    VANILLA = "vanilla"
    NARX = "narx"


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 0.01
    window_len: int = 40
    batch_size: int = 16
    iterations: int = 1200
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    mode: TrainMode = TrainMode.LFI
    hidden: Tuple[int, ...] = DEFAULT_HIDDEN
    activation: str = "tanh"
    jac_subset: Optional[int] = None
    jac_scale: str = "relative"
    log_every: int = 100
    log_wall_time: bool = False

    def __post_init__(self):
        try:
            self.mode = TrainMode(self.mode)
        except ValueError:
            pass  # reported by problems()
        self.hidden = tuple(self.hidden)

    @property
    def effective_lambda2(self) -> float:
        """lambda2 actually applied: vanilla training never weights L_jac."""
        return 0.0 if self.mode is TrainMode.VANILLA else self.lambda2

    def problems(self) -> List[Tuple[str, str]]:
        """(field, reason) for every invalid value."""
        found = []
        if not isinstance(self.mode, TrainMode):
            found.append(("mode", f"'{self.mode}' is not one of lfi, vanilla, narx"))
        if not self.lambda1 > 0:
            found.append(("lambda1", "must be > 0"))
        if not self.lambda2 >= 0:
            found.append(("lambda2", "must be >= 0"))
        if int(self.window_len) != self.window_len or self.window_len < 2:
            found.append(("window_len", "must be an integer >= 2"))
        if self.batch_size < 1:
            found.append(("batch_size", "must be >= 1"))
        if self.iterations < 1:
            found.append(("iterations", "must be >= 1"))
        if not self.lr > 0:
            found.append(("lr", "must be > 0"))
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            found.append(("adam_beta1", "Adam betas must lie in [0, 1)"))
        if not self.adam_eps > 0:
            found.append(("adam_eps", "must be > 0"))
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            found.append(("hidden", "needs at least one layer of width >= 1"))
        if self.activation not in ("tanh", "relu"):
            found.append(("activation", "must be 'tanh' or 'relu'"))
        if self.jac_subset is not None and self.jac_subset < 1:
            found.append(("jac_subset", "must be >= 1 or null for all features"))
        if self.jac_scale not in JAC_SCALES:
            found.append(("jac_scale", "must be 'relative' or 'absolute'"))
        if self.log_every < 1:
            found.append(("log_every", "must be >= 1"))
        return found

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(
                ", ".join(f"train.{name}" for name, _ in problems),
                "; ".join(reason for _, reason in problems),
            )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if isinstance(self.mode, TrainMode):
            data["mode"] = self.mode.value
        data["hidden"] = list(self.hidden)
        return data

    def echo(self) -> Dict[str, Any]:
        """What the model file records about its training."""
        return {**self.to_dict(), "lambda2": self.effective_lambda2}


# One iteration's work: (L_data, L_jac, gradient or None when non-finite).
StepFn = Callable[
    [MlpParams, np.random.Generator], Tuple[float, float, Optional[ParamGradient]]
]


@dataclass
class _Clock:
    enabled: bool
    start: float = field(default_factory=time.perf_counter)

    def ms(self) -> float:
        return (time.perf_counter() - self.start) * 1000.0 if self.enabled else 0.0


def run_loop(
    params: MlpParams,
    config: TrainConfig,
    step: StepFn,
    rng: np.random.Generator,
    log: Optional[TrainLog] = None,
) -> Tuple[MlpParams, TrainLog]:
    """Iterate ``step`` + Adam, logging every iteration.

    Iterations with a non-finite loss skip the update; ``MAX_NONFINITE`` of
    them in a row abort the run.
    """
    log = log if log is not None else TrainLog()
    state = AdamState.zeros(params)
    clock = _Clock(config.log_wall_time)
    lambda2 = config.effective_lambda2
    consecutive = 0
    for iteration in range(1, config.iterations + 1):
        L_data, L_jac, grad = step(params, rng)
        L_total = total_loss(L_data, L_jac, config.lambda1, lambda2)
        finite = grad is not None and math.isfinite(L_total)
        grad_norm = grad.norm() if finite else math.nan
        if finite and not math.isfinite(grad_norm):
            finite = False
        if finite:
            consecutive = 0
            params, state = adam_step(params, grad, state, config)
        else:
            consecutive += 1
            logger.warning(f"Iteration {iteration}: non-finite loss, update skipped")
            if consecutive >= MAX_NONFINITE:
                raise NonConvergence(iteration, consecutive)
        log.append(
            TrainRecord(iteration, L_data, L_jac, L_total, grad_norm, clock.ms())
        )
        if iteration % config.log_every == 0 or iteration == config.iterations:
            logger.info(
                f"iter {iteration}/{config.iterations} L_data={L_data:.4e} "
                f"L_jac={L_jac:.4e} L_total={L_total:.4e} |g|={grad_norm:.3e}"
            )
    return params, log


def _uniform_dt(dataset: Dataset) -> float:
    dts = [t.dt for t in dataset.trajectories]
    if max(dts) - min(dts) > 1e-12 * max(dts):
        raise ValueError("training trajectories must share one sample period")
    return dts[0]


def composite_loss_and_grad(
    params: MlpParams,
    x0,
    inputs,
    targets,
    h: float,
    jac_points: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    lambda1: float,
    lambda2: float,
) -> Tuple[float, float, ParamGradient]:
    """(L_data, L_jac, grad of lambda1 L_data + lambda2 L_jac) for one batch.

    ``jac_points`` is (X_ss, U_ss, J_refs), optionally followed by per-point
    weights, or None.
    """
    preds, tape = rollout_window(params, x0, inputs, h, record_gradients=True)
    residuals = np.asarray(preds) - np.asarray(targets)
    if residuals.ndim == 2:
        residuals = residuals[None]
    K = residuals.shape[1]
    L_data = float(np.sum(residuals * residuals) / (K * residuals.shape[0]))
    grad = grad_forward_loss(params, tape, residuals).scaled(lambda1)
    L_jac = 0.0
    if jac_points is not None:
        L_jac, g_jac = jac_loss_and_grad_batch(params, *jac_points)
        if lambda2 > 0:
            grad = grad + g_jac.scaled(lambda2)
    return L_data, L_jac, grad


def _batch_loss_skipping_nonfinite(
    params, x0, inputs, targets, h, jac_points, lambdas, log
):
    """``composite_loss_and_grad``, dropping batch rows whose rollout goes
    non-finite and retrying on the rest."""
    while x0.shape[0]:
        try:
            return composite_loss_and_grad(
                params, x0, inputs, targets, h, jac_points, *lambdas
            )
        except NonFiniteState as e:
            keep = np.setdiff1d(np.arange(x0.shape[0]), e.rows)
            log.skipped_windows += x0.shape[0] - keep.size
            logger.warning(f"Skipping {x0.shape[0] - keep.size} window(s): {e}")
            x0, inputs, targets = x0[keep], inputs[keep], targets[keep]
    return math.nan, math.nan, None


def train(
    dataset: Dataset,
    config: TrainConfig,
    latent: Optional[LatentReport] = None,
    initial: Optional[MlpParams] = None,
) -> Tuple[MlpParams, TrainLog]:
    """Fit f_NN to a normalized dataset.

    ``latent`` defaults to features extracted from ``dataset`` itself. L_jac
    is computed and logged in every mode; it only enters the gradient when the
    effective lambda2 is positive, so vanilla and lfi with lambda2 = 0 produce
    the same log.
    """
    config.validate()
    if config.mode is TrainMode.NARX:
        raise ValueError("use train_narx for the NARX baseline")
    d_x, d_u = dataset.state_dim, dataset.input_dim
    K = int(config.window_len)
    h = _uniform_dt(dataset)
    if latent is None:
        latent = precompute_latent_features(dataset)
    rng = np.random.default_rng(config.seed)
    if initial is None:
        dims = layer_dims_for(d_x, d_u, config.hidden)
        initial = init(dims, config.activation, config.seed)
    params = initial
    lambda2 = config.effective_lambda2
    log = TrainLog()

    def step(params: MlpParams, rng: np.random.Generator):
        windows = sample_windows(dataset, K, config.batch_size, rng)
        jac_points = None
        if len(latent):
            subset = None
            if config.jac_subset is not None and config.jac_subset < len(latent):
                picked = rng.choice(len(latent), config.jac_subset, replace=False)
                subset = np.sort(picked)
            jac_points = _jac_points(latent, subset, config.jac_scale)
        return _batch_loss_skipping_nonfinite(
            params,
            *gather_windows(dataset, windows, K),
            h,
            jac_points,
            (config.lambda1, lambda2),
            log,
        )

    logger.info(
        f"Training {config.mode.value}: {len(dataset)} trajectories, "
        f"{len(latent)} latent features, K={K}, batch={config.batch_size}, "
        f"lambda=({config.lambda1}, {lambda2})"
    )
    params, log = run_loop(params, config, step, rng, log)
    final = log.final
    echo = {
        **config.echo(),
        "data_dt": h,
        "latent": latent.summary(),
        "final": {
            "L_data": final.L_data,
            "L_jac": final.L_jac,
            "L_total": final.L_total,
        },
        "skipped_windows": log.skipped_windows,
    }
    return replace(params, norm=dataset.norm, train_config_echo=echo), log


def _jac_points(latent: LatentReport, subset, jac_scale: str) -> Tuple:
    X_ss, U_ss, J_refs = latent.stacked(subset)
    if jac_scale == "relative":
        return X_ss, U_ss, J_refs, relative_jac_weights(J_refs)
    return X_ss, U_ss, J_refs


def jacobian_loss(
    params: MlpParams, latent: LatentReport, jac_scale: str = "relative"
) -> float:
    """Post-hoc Jacobian loss over every latent feature, scaled as in training."""
    if not len(latent):
        return math.nan
    loss, _ = jac_loss_and_grad_batch(params, *_jac_points(latent, None, jac_scale))
    return loss


def layer_dims_for(d_x: int, d_u: int, hidden: Sequence[int]) -> List[int]:
    return [d_x + d_u, *hidden, d_x]
