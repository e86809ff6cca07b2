"""
Latent perturbation features: a data-derived Jacobian J_ref around the
equilibrium a trajectory settles to, and a bound on its noise error.

Steps: find the window where ||x'|| is smallest and average it into x_ss;
pick samples in an annulus around x_ss; stack deviations and derivatives
column-wise into dX and dXdot; J_ref = dXdot pinv(dX).
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .core.exceptions import (
    InsufficientSamples,
    RankDeficient,
    TooShort,
    UnboundedError,
)
from .signals.processing import finite_diff
from .signals.trajectory import Trajectory

logger = logging.getLogger(__name__)

PINV_REL_TOL = 1e-10
EPS_MIN = 1e-6
R_MAX = 0.2
N_MAX = 200


@dataclass(frozen=True)
class EquilibriumEstimate:
    """x_ss and the sample window [i0, i1) it was averaged over."""

    x_ss: np.ndarray
    window: Tuple[int, int]
    residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x_ss": np.asarray(self.x_ss).tolist(),
            "window": list(self.window),
            "residual": self.residual,
        }


@dataclass(frozen=True)
class JacobianEstimate:
    J_ref: np.ndarray
    n_samples: int
    cond: float
    deltaX_norm: float
    lsq_residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "J_ref": np.asarray(self.J_ref).tolist(),
            "n_samples": self.n_samples,
            "cond": self.cond,
            "deltaX_norm": self.deltaX_norm,
            "lsq_residual": self.lsq_residual,
        }


@dataclass(frozen=True)
class NoiseBound:
    sigma_x: float
    sigma_xdot: float
    jstar_norm: float
    bound: float
    jstar_is_proxy: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def detect_equilibrium(
    traj: Trajectory, window_len: int, scheme: str = "central"
) -> EquilibriumEstimate:
    """Slide a window over ||x'|| and average the states of the quietest one."""
    if window_len < 2:
        raise ValueError("window_len must be >= 2")
    if window_len > traj.n_samples:
        raise TooShort(traj.n_samples, window_len)
    speed = np.linalg.norm(finite_diff(traj, scheme), axis=1)
    csum = np.concatenate([[0.0], np.cumsum(speed)])
    means = (csum[window_len:] - csum[:-window_len]) / window_len
    # latest of the (numerically) tied minima: settled tails win ties
    i0 = int(len(means) - 1 - np.argmin(means[::-1]))
    i1 = i0 + window_len
    residual = float(max(speed[i0:i1].mean(), 0.0))
    x_ss = traj.states[i0:i1].mean(axis=0)
    logger.debug(f"Equilibrium window [{i0}, {i1}) residual {residual:.3e}")
    return EquilibriumEstimate(x_ss, (i0, i1), residual)


def select_neighbors(
    traj: Trajectory,
    eq: EquilibriumEstimate,
    eps_min: float = EPS_MIN,
    r_max: float = R_MAX,
    n_max: int = N_MAX,
) -> List[int]:
    """Indices with eps_min <= ||x_i - x_ss|| <= r_max outside the steady window.

    Ordered most-recent first and capped at ``n_max``.
    """
    if not eps_min < r_max:
        raise ValueError("eps_min must be smaller than r_max")
    dist = np.linalg.norm(traj.states - eq.x_ss, axis=1)
    band = (dist >= eps_min) & (dist <= r_max)
    band[eq.window[0] : eq.window[1]] = False
    chosen = np.flatnonzero(band)[::-1][:n_max].tolist()
    if len(chosen) < traj.state_dim:
        raise InsufficientSamples(len(chosen), traj.state_dim)
    return chosen


def pseudo_inverse(M, rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse by SVD; singular values below
    rel_tol * sigma_max count as zero."""
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0:
        return np.zeros(M.T.shape)
    keep = s > rel_tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def estimate_jacobian(
    traj: Trajectory,
    eq: EquilibriumEstimate,
    indices,
    derivatives: Optional[np.ndarray] = None,
    scheme: str = "central",
    rel_tol: float = PINV_REL_TOL,
) -> JacobianEstimate:
    """J_ref = dXdot pinv(dX) with dX columns x_i - x_ss.

    ``derivatives`` (N x d_x, aligned with the trajectory) replaces the
    finite-difference derivatives when given.

    Raises:
        RankDeficient: when dX does not span every state direction.
    """
    idx = np.asarray(list(indices), dtype=int)
    d_x = traj.state_dim
    if idx.size < d_x:
        raise InsufficientSamples(int(idx.size), d_x)
    xdot = finite_diff(traj, scheme) if derivatives is None else np.asarray(derivatives)
    dX = (traj.states[idx] - eq.x_ss).T
    dXdot = xdot[idx].T
    s = np.linalg.svd(dX, compute_uv=False)
    rank = int(np.sum(s > rel_tol * s[0])) if s[0] > 0 else 0
    if rank < d_x:
        raise RankDeficient(rank, d_x, math.inf)
    J_ref = dXdot @ pseudo_inverse(dX, rel_tol)
    return JacobianEstimate(
        J_ref=J_ref,
        n_samples=int(idx.size),
        cond=float(s[0] / s[-1]),
        deltaX_norm=float(s[0]),
        lsq_residual=float(np.linalg.norm(dXdot - J_ref @ dX)),
    )


def error_bound(
    est: JacobianEstimate,
    sigma_x: float,
    sigma_xdot: float,
    jstar_norm: Optional[float] = None,
) -> NoiseBound:
    """kappa(dX) * sqrt(N) * (sigma_xdot + sigma_x * ||J_*||_2) / ||dX||_2.

    Without ``jstar_norm`` the estimate's own ||J_ref||_2 is used as a
    plug-in proxy (flagged in the result).
    """
    if min(sigma_x, sigma_xdot) < 0 or (jstar_norm is not None and jstar_norm < 0):
        raise ValueError("noise levels and ||J_*|| must be >= 0")
    if not math.isfinite(est.cond):
        raise UnboundedError(est.cond)
    proxy = jstar_norm is None
    if proxy:
        jstar_norm = float(np.linalg.norm(est.J_ref, 2))
    root_n = math.sqrt(est.n_samples)
    bound = est.cond * (
        root_n * sigma_xdot / est.deltaX_norm
        + root_n * sigma_x / est.deltaX_norm * jstar_norm
    )
    return NoiseBound(sigma_x, sigma_xdot, jstar_norm, bound, proxy)


def derivative_noise_level(sigma_x: float, dt: float, scheme: str = "central") -> float:
    """Std of the differenced i.i.d. noise: sqrt(2) sigma_x / (2 dt) centrally."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if scheme == "central":
        return sigma_x * math.sqrt(2.0) / (2.0 * dt)
    if scheme == "forward":
        return sigma_x * math.sqrt(2.0) / dt
    raise ValueError(f"unknown difference scheme '{scheme}'")


def extract(
    traj: Trajectory,
    window_len: Optional[int] = None,
    eps_min: float = EPS_MIN,
    r_max: float = R_MAX,
    n_max: int = N_MAX,
    scheme: str = "central",
) -> Tuple[EquilibriumEstimate, JacobianEstimate]:
    """Full pipeline on one trajectory (window defaults to N/20)."""
    window_len = window_len or max(2, traj.n_samples // 20)
    eq = detect_equilibrium(traj, window_len, scheme)
    indices = select_neighbors(traj, eq, eps_min, r_max, n_max)
    return eq, estimate_jacobian(traj, eq, indices, scheme=scheme)
