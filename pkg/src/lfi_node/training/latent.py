"""
Latent Jacobian features, extracted once per trajectory before training.

A trajectory contributes a feature only if it settles:

- the mean ||x'|| over its quietest window is at most ``settle_tol``;
- no sample from the start of that window on lies farther than ``drift_tol``
  from the window mean x_ss;
- when a plant is given, the plant has an equilibrium at the steady input.

Tolerances are absolute and in the units of the dataset (normalized units
for a normalized dataset). Excluded trajectories still feed the trajectory
loss.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .. import jacest, plants
from ..core.exceptions import EstimationError, NoEquilibrium
from ..signals.trajectory import Dataset, NormStats, Trajectory

logger = logging.getLogger(__name__)

SETTLE_TOL = 1e-2
DRIFT_TOL = 1e-2


@dataclass(frozen=True)
class LatentFeature:
    trajectory: int
    x_ss: np.ndarray
    u_ss: np.ndarray
    J_ref: np.ndarray
    cond: float
    n_samples: int


@dataclass
class LatentReport:
    features: List[LatentFeature] = field(default_factory=list)
    excluded: List[Dict[str, Any]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)

    def stacked(self, indices=None):
        """(X_ss, U_ss, J_refs) arrays over all features or the given subset."""
        if indices is None:
            chosen = self.features
        else:
            chosen = [self.features[i] for i in indices]
        return (
            np.array([f.x_ss for f in chosen]),
            np.array([f.u_ss for f in chosen]),
            np.array([f.J_ref for f in chosen]),
        )

    def summary(self) -> Dict[str, Any]:
        return {
            "used": len(self.features),
            "excluded": list(self.excluded),
        }


def settling_problem(
    traj: Trajectory,
    eq: jacest.EquilibriumEstimate,
    settle_tol: float = SETTLE_TOL,
    drift_tol: float = DRIFT_TOL,
) -> Optional[str]:
    """Why ``traj`` has not settled at ``eq``, or None when it has."""
    if eq.residual > settle_tol:
        return f"not settled (window residual {eq.residual:.3g} > {settle_tol:g})"
    tail = traj.states[eq.window[0] :]
    drift = float(np.max(np.linalg.norm(tail - eq.x_ss, axis=1)))
    if drift > drift_tol:
        return f"not settled (drift {drift:.3g} from x_ss > {drift_tol:g})"
    return None


def _plant_problem(plant, norm: Optional[NormStats], x_ss, u_ss) -> Optional[str]:
    """Reason the plant has no equilibrium at the (physical) steady input."""
    if norm is not None:
        x_ss = x_ss * norm.state_std + norm.state_mean
        u_ss = u_ss * norm.input_std + norm.input_mean
    try:
        plants.find_equilibrium(plant, u_ss, x_ss)
    except NoEquilibrium as e:
        return f"no equilibrium at u={np.round(u_ss, 6).tolist()} ({e})"
    return None


def precompute_latent_features(
    dataset: Dataset,
    window_len: Optional[int] = None,
    eps_min: float = jacest.EPS_MIN,
    r_max: float = jacest.R_MAX,
    n_max: int = jacest.N_MAX,
    scheme: str = "central",
    settle_tol: float = SETTLE_TOL,
    drift_tol: float = DRIFT_TOL,
    plant=None,
) -> LatentReport:
    """Run the Jacobian extraction on every trajectory of ``dataset``.

    u_ss is the mean input over the steady window. ``plant`` (optional) is
    checked for an equilibrium at u_ss, mapped back through ``dataset.norm``.
    """
    report = LatentReport()

    def exclude(index: int, reason: str) -> None:
        report.excluded.append({"trajectory": index, "reason": reason})
        logger.warning(f"Trajectory {index}: {reason}; no latent feature")

    for index, traj in enumerate(dataset.trajectories):
        try:
            wl = window_len or max(2, traj.n_samples // 20)
            eq = jacest.detect_equilibrium(traj, wl, scheme)
            problem = settling_problem(traj, eq, settle_tol, drift_tol)
            if problem is not None:
                exclude(index, problem)
                continue
            i0, i1 = eq.window
            u_ss = traj.inputs[i0:i1].mean(axis=0)
            if plant is not None:
                problem = _plant_problem(plant, dataset.norm, eq.x_ss, u_ss)
                if problem is not None:
                    exclude(index, problem)
                    continue
            indices = jacest.select_neighbors(traj, eq, eps_min, r_max, n_max)
            est = jacest.estimate_jacobian(traj, eq, indices, scheme=scheme)
        except EstimationError as e:
            exclude(index, str(e))
            continue
        report.features.append(
            LatentFeature(
                trajectory=index,
                x_ss=eq.x_ss,
                u_ss=u_ss,
                J_ref=est.J_ref,
                cond=est.cond,
                n_samples=est.n_samples,
            )
        )
    logger.info(
        f"Latent features: {len(report.features)} of {len(dataset)} trajectories "
        f"({len(report.excluded)} excluded)"
    )
    return report
