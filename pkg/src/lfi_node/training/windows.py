"""Random training windows drawn from a dataset."""

from typing import List, Tuple

import numpy as np

from ..core.exceptions import TooShort
from ..signals.trajectory import Dataset


def sample_windows(
    dataset: Dataset, K: int, batch_size: int, rng: np.random.Generator
) -> List[Tuple[int, int]]:
    """``batch_size`` (trajectory id, start) pairs.

    The trajectory is drawn uniformly, then the start uniformly in
    [0, N - K - 1], so every window holds K + 1 samples.
    """
    if K < 1 or batch_size < 1:
        raise ValueError("K and batch_size must be >= 1")
    lengths = np.array([t.n_samples for t in dataset.trajectories])
    shortest = int(lengths.min())
    if shortest < K + 1:
        raise TooShort(shortest, K + 1, "training trajectory")
    ids = rng.integers(0, len(lengths), size=batch_size)
    starts = rng.integers(0, lengths[ids] - K)
    return [(int(i), int(s)) for i, s in zip(ids, starts)]


def gather_windows(dataset: Dataset, windows, K: int):
    """Stack windows into (x0 B x d_x, inputs B x K x d_u, targets B x K x d_x)."""
    x0, inputs, targets = [], [], []
    for tid, start in windows:
        traj = dataset.trajectories[tid]
        x0.append(traj.states[start])
        inputs.append(traj.inputs[start : start + K])
        targets.append(traj.states[start + 1 : start + K + 1])
    return np.array(x0), np.array(inputs), np.array(targets)
