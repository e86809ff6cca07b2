"""
Small-signal evaluation: eigenvalues of Jacobians, linearization of learned
models at operating points, stability verdicts and eigenvalue matching.

``eigvals`` is a self-contained dense eigenvalue solver for small real
matrices: diagonal balancing by powers of two, Householder reduction to upper
Hessenberg form, then Francis double-shift QR iteration with deflation.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core.exceptions import ConvergenceFailure, NoEquilibrium
from .neuralfield import MlpParams, forward, state_jacobian

logger = logging.getLogger(__name__)

MAX_QR_ITERATIONS = 30
DEFAULT_MARGIN = 1e-6
NEWTON_TOL = 1e-10
NEWTON_MAX_STEPS = 50
RADIX = 2.0


class Verdict(Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    MARGINAL = "Marginal"


class Source(Enum):
    ANALYTIC_PLANT = "AnalyticPlant"
    DATA_JREF = "DataJref"
    MODEL_JNN = "ModelJnn"


def _balance(a: np.ndarray) -> np.ndarray:
    """Similarity scaling by powers of the radix until row and column norms match."""
    n = a.shape[0]
    sqrdx = RADIX * RADIX
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.sum(np.abs(a[:, i])) - abs(a[i, i])
            r = np.sum(np.abs(a[i, :])) - abs(a[i, i])
            if c == 0 or r == 0:
                continue
            g = r / RADIX
            f = 1.0
            s = c + r
            while c < g:
                f *= RADIX
                c *= sqrdx
            g = r * RADIX
            while c > g:
                f /= RADIX
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def _hessenberg(a: np.ndarray) -> np.ndarray:
    """Householder reduction to upper Hessenberg form."""
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1 :, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0:
            continue
        v = x
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        a[k + 1 :, :] -= 2.0 * np.outer(v, v @ a[k + 1 :, :])
        a[:, k + 1 :] -= 2.0 * np.outer(a[:, k + 1 :] @ v, v)
        a[k + 2 :, k] = 0.0
    return a


def _hqr(h: np.ndarray) -> List[complex]:
    """Francis double-shift QR on an upper Hessenberg matrix.

    Indices are 1-based on a padded copy to keep the deflation bookkeeping
    readable.
    """
    n = h.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = h
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    found = []
    anorm = sum(
        abs(a[i, j]) for i in range(1, n + 1) for j in range(max(i - 1, 1), n + 1)
    )
    nn = n
    t = 0.0
    while nn >= 1:
        its = 0
        while True:
            lo = 1
            for ll in range(nn, 1, -1):
                s = abs(a[ll - 1, ll - 1]) + abs(a[ll, ll])
                if s == 0.0:
                    s = anorm
                if abs(a[ll, ll - 1]) + s == s:
                    a[ll, ll - 1] = 0.0
                    lo = ll
                    break
            x = a[nn, nn]
            if lo == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                found.append(complex(wr[nn], 0.0))
                nn -= 1
            else:
                y = a[nn - 1, nn - 1]
                w = a[nn, nn - 1] * a[nn - 1, nn]
                if lo == nn - 1:
                    p = 0.5 * (y - x)
                    q = p * p + w
                    z = math.sqrt(abs(q))
                    x += t
                    if q >= 0.0:
                        z = p + math.copysign(z, p)
                        wr[nn - 1] = wr[nn] = x + z
                        if z:
                            wr[nn] = x - w / z
                        wi[nn - 1] = wi[nn] = 0.0
                    else:
                        wr[nn - 1] = wr[nn] = x + p
                        wi[nn - 1] = -z
                        wi[nn] = z
                    found.extend(
                        [complex(wr[nn - 1], wi[nn - 1]), complex(wr[nn], wi[nn])]
                    )
                    nn -= 2
                else:
                    if its == MAX_QR_ITERATIONS:
                        raise ConvergenceFailure(found, n)
                    if its in (10, 20):
                        # exceptional shift
                        t += x
                        for i in range(1, nn + 1):
                            a[i, i] -= x
                        s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                        y = x = 0.75 * s
                        w = -0.4375 * s * s
                    its += 1
                    m = nn - 2
                    while m >= lo:
                        z = a[m, m]
                        r = x - z
                        s = y - z
                        p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                        q = a[m + 1, m + 1] - z - r - s
                        r = a[m + 2, m + 1]
                        s = abs(p) + abs(q) + abs(r)
                        p /= s
                        q /= s
                        r /= s
                        if m == lo:
                            break
                        u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                        v = abs(p) * (
                            abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1])
                        )
                        if u + v == v:
                            break
                        m -= 1
                    for i in range(m + 2, nn + 1):
                        a[i, i - 2] = 0.0
                        if i != m + 2:
                            a[i, i - 3] = 0.0
                    for k in range(m, nn):
                        if k != m:
                            p = a[k, k - 1]
                            q = a[k + 1, k - 1]
                            r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                            x = abs(p) + abs(q) + abs(r)
                            if x != 0.0:
                                p /= x
                                q /= x
                                r /= x
                        s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                        if s == 0.0:
                            continue
                        if k == m:
                            if lo != m:
                                a[k, k - 1] = -a[k, k - 1]
                        else:
                            a[k, k - 1] = -s * x
                        p += s
                        x = p / s
                        y = q / s
                        z = r / s
                        q /= p
                        r /= p
                        for j in range(k, nn + 1):
                            p = a[k, j] + q * a[k + 1, j]
                            if k != nn - 1:
                                p += r * a[k + 2, j]
                                a[k + 2, j] -= p * z
                            a[k + 1, j] -= p * y
                            a[k, j] -= p * x
                        mmin = nn if nn < k + 3 else k + 3
                        for i in range(lo, mmin + 1):
                            p = x * a[i, k] + y * a[i, k + 1]
                            if k != nn - 1:
                                p += z * a[i, k + 2]
                                a[i, k + 2] -= p * r
                            a[i, k + 1] -= p * q
                            a[i, k] -= p
            if lo >= nn - 1:
                break
    return found


def eigvals(M) -> List[complex]:
    """All eigenvalues of a real square matrix, sorted by descending real part.

    Raises:
        ConvergenceFailure: with the eigenvalues found before the cap.
    """
    a = np.array(M, dtype=float, ndmin=2)
    if a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"eigvals needs a non-empty square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    if a.shape[0] == 1:
        return [complex(a[0, 0], 0.0)]
    found = _hqr(_hessenberg(_balance(a)))
    return sorted(found, key=lambda z: (-z.real, -z.imag))


def classify(eigs: Sequence[complex], margin: float = DEFAULT_MARGIN) -> Verdict:
    if len(eigs) == 0:
        raise ValueError("empty eigenvalue list")
    max_real = max(complex(e).real for e in eigs)
    if max_real < -margin:
        return Verdict.STABLE
    if max_real > margin:
        return Verdict.UNSTABLE
    return Verdict.MARGINAL


def _modal(e: complex) -> Dict[str, float]:
    magnitude = abs(e)
    return {
        "real": e.real,
        "imag": e.imag,
        "damping_ratio": -e.real / magnitude if magnitude > 0 else float("nan"),
        "natural_frequency_hz": magnitude / (2.0 * math.pi),
    }


@dataclass(frozen=True)
class EigenReport:
    eigenvalues: List[complex]
    max_real: float
    verdict: Verdict
    source: Source

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eigenvalues": [[e.real, e.imag] for e in self.eigenvalues],
            "modes": [_modal(e) for e in self.eigenvalues],
            "max_real": self.max_real,
            "verdict": self.verdict.value,
            "source": self.source.value,
        }


def eigen_report(
    M,
    source: Source,
    margin: float = DEFAULT_MARGIN,
    eigs: Optional[List[complex]] = None,
) -> EigenReport:
    eigs = eigs if eigs is not None else eigvals(M)
    return EigenReport(
        eigenvalues=list(eigs),
        max_real=max(e.real for e in eigs),
        verdict=classify(eigs, margin),
        source=Source(source),
    )


@dataclass(frozen=True)
class EigError:
    pairs: List[Tuple[complex, complex]]
    mae: float
    unmatched_estimated: List[complex] = field(default_factory=list)
    unmatched_reference: List[complex] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        def c(z):
            return [z.real, z.imag]

        return {
            "pairs": [[c(e), c(r)] for e, r in self.pairs],
            "mae": self.mae,
            "unmatched_estimated": [c(z) for z in self.unmatched_estimated],
            "unmatched_reference": [c(z) for z in self.unmatched_reference],
        }


def eig_error(estimated: Sequence[complex], reference: Sequence[complex]) -> EigError:
    """Optimal-assignment matching on |lambda_i - lambda_hat_j|.

    With unequal sizes the smaller set is matched and the rest is reported as
    unmatched.
    """
    est = [complex(e) for e in estimated]
    ref = [complex(r) for r in reference]
    if not est or not ref:
        return EigError([], float("nan"), est, ref)
    cost = np.abs(np.subtract.outer(np.array(est), np.array(ref)))
    rows, cols = linear_sum_assignment(cost)
    pairs = [(est[i], ref[j]) for i, j in zip(rows, cols)]
    mae = float(np.mean(cost[rows, cols]))
    return EigError(
        pairs,
        mae,
        [e for i, e in enumerate(est) if i not in set(rows)],
        [r for j, r in enumerate(ref) if j not in set(cols)],
    )


def _newton(fn, jac, z, what: str) -> np.ndarray:
    residual = math.inf
    for step in range(NEWTON_MAX_STEPS + 1):
        f = fn(z)
        residual = float(np.linalg.norm(f))
        if not math.isfinite(residual):
            raise NoEquilibrium(f"{what}: Newton iterate diverged", step, residual)
        if residual <= NEWTON_TOL:
            return z
        if step == NEWTON_MAX_STEPS:
            break
        try:
            z = z - np.linalg.solve(jac(z), f)
        except np.linalg.LinAlgError:
            raise NoEquilibrium(f"{what}: singular Jacobian", step, residual)
    raise NoEquilibrium(f"{what}: step cap exhausted", NEWTON_MAX_STEPS, residual)


def denormalize_jacobian(J_norm, norm) -> np.ndarray:
    """J_phys = S_x J_norm S_x^-1 / t_scale with S_x = diag(state_std)."""
    s = norm.state_std
    return (s[:, None] * np.asarray(J_norm) / s[None, :]) / norm.time_scale


def model_linearize(model: MlpParams, u, x_guess) -> Tuple[np.ndarray, np.ndarray]:
    """Equilibrium of f_NN(., u) from x_guess and the Jacobian there, physical units.

    Newton runs in normalized space on f_NN.

    Raises:
        NoEquilibrium: when Newton fails (itself a stability signal).
    """
    norm = model.norm
    if norm is None:
        raise ValueError("model carries no normalization statistics")
    u_n = (np.asarray(u, dtype=float) - norm.input_mean) / norm.input_std
    z0 = (np.asarray(x_guess, dtype=float) - norm.state_mean) / norm.state_std
    z_ss = _newton(
        lambda z: forward(model, z, u_n),
        lambda z: state_jacobian(model, z, u_n),
        z0,
        "neural ODE",
    )
    J_norm = state_jacobian(model, z_ss, u_n)
    x_ss = z_ss * norm.state_std + norm.state_mean
    return x_ss, denormalize_jacobian(J_norm, norm)


def narx_linearize(model, u, x_guess) -> Tuple[np.ndarray, np.ndarray, List[complex]]:
    """Fixed point of the one-step map, its discrete Jacobian, and the
    continuous-equivalent eigenvalues log(mu) / dt (physical units)."""
    params = model.params
    norm = params.norm
    u_n = (np.asarray(u, dtype=float) - norm.input_mean) / norm.input_std
    z0 = (np.asarray(x_guess, dtype=float) - norm.state_mean) / norm.state_std
    eye = np.eye(params.state_dim)
    z_ss = _newton(
        lambda z: forward(params, z, u_n) - z,
        lambda z: state_jacobian(params, z, u_n) - eye,
        z0,
        "NARX map",
    )
    s = norm.state_std
    J_d = s[:, None] * state_jacobian(params, z_ss, u_n) / s[None, :]
    mus = eigvals(J_d)
    dt_phys = model.dt * norm.time_scale
    with np.errstate(divide="ignore"):
        eigs = [complex(np.log(complex(mu))) / dt_phys for mu in mus]
    return z_ss * s + norm.state_mean, J_d, eigs


def _sig(x: float) -> str:
    return f"{x:.6g}"


def format_eigen_table(reports: Dict[str, EigenReport]) -> str:
    """Fixed-width table of every eigenvalue per labelled report"""
    header = ("source", "real", "imag", "damping", "f_n [Hz]", "verdict")
    rows = [header]
    for label, report in reports.items():
        for e in report.eigenvalues:
            modal = _modal(e)
            rows.append(
                (
                    label,
                    _sig(e.real),
                    _sig(e.imag),
                    _sig(modal["damping_ratio"]),
                    _sig(modal["natural_frequency_hz"]),
                    report.verdict.value,
                )
            )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join(
        "  ".join(
            cell.rjust(w) if i else cell.ljust(w)
            for i, (cell, w) in enumerate(zip(r, widths))
        )
        for r in rows
    )
