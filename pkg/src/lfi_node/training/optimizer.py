"""Adam with bias correction over MlpParams arrays."""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..core.exceptions import DimensionError
from ..neuralfield import MlpParams, ParamGradient


@dataclass(frozen=True)
class AdamState:
    """First and second moments (weights then biases) and the step count."""

    m: Tuple[np.ndarray, ...]
    v: Tuple[np.ndarray, ...]
    step: int = 0

    @classmethod
    def zeros(cls, params: MlpParams) -> "AdamState":
        arrays = list(params.weights) + list(params.biases)
        return cls(
            tuple(np.zeros_like(a) for a in arrays),
            tuple(np.zeros_like(a) for a in arrays),
            0,
        )


def adam_step(
    params: MlpParams, grads: ParamGradient, state: AdamState, config
) -> Tuple[MlpParams, AdamState]:
    """One Adam update; ``config`` supplies lr, adam_beta1, adam_beta2, adam_eps."""
    arrays: List[np.ndarray] = list(params.weights) + list(params.biases)
    g_arrays = grads.arrays()
    if len(g_arrays) != len(arrays) or len(state.m) != len(arrays):
        raise DimensionError("gradient arrays", len(arrays), len(g_arrays))
    for a, g in zip(arrays, g_arrays):
        if a.shape != g.shape:
            raise DimensionError("gradient array", a.shape, g.shape)
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    m = tuple(b1 * m0 + (1.0 - b1) * g for m0, g in zip(state.m, g_arrays))
    v = tuple(b2 * v0 + (1.0 - b2) * g * g for v0, g in zip(state.v, g_arrays))
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    updated = [
        a - config.lr * (mi / c1) / (np.sqrt(vi / c2) + config.adam_eps)
        for a, mi, vi in zip(arrays, m, v)
    ]
    n = len(params.weights)
    return params.with_arrays(updated[:n], updated[n:]), AdamState(m, v, t)
