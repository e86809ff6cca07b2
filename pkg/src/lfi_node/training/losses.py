"""Trajectory and composite losses."""

import numpy as np

from ..core.exceptions import DimensionError


def data_loss(predicted, reference) -> float:
    """(1/K) * sum_k ||x_hat(t_k) - x(t_k)||^2 over a K x d_x window."""
    predicted = np.asarray(predicted, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if predicted.shape != reference.shape:
        raise DimensionError("predicted window", reference.shape, predicted.shape)
    r = np.atleast_2d(predicted - reference)
    return float(np.sum(r * r) / r.shape[0])


def total_loss(L_data: float, L_jac: float, lambda1: float, lambda2: float) -> float:
    return lambda1 * L_data + lambda2 * L_jac
