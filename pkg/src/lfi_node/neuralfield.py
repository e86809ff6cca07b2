"""
Neural vector field f_NN(x, u) = W_n s(... s(W_1 z + b_1) ...) + b_n, z = [x; u].

Everything here is closed-form layer recursion on numpy arrays: forward
evaluation (batched over rows), the exact state Jacobian, reverse
accumulation through recorded Runge-Kutta rollouts for the trajectory loss,
and the exact parameter gradient of the Jacobian-matching loss (which
differentiates through the activation slopes, i.e. second order in the
network).
"""

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core.exceptions import DataIOError, DimensionError, FormatError, TapeMissing
from .signals.trajectory import NormStats

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (64, 128, 128)


class Activation(Enum):
    TANH = "tanh"
    RELU = "relu"


def _activate(activation: Activation, p: np.ndarray):
    """Return s(p), s'(p), s''(p)."""
    if activation is Activation.TANH:
        t = np.tanh(p)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    # relu: s'' is zero almost everywhere
    return np.maximum(p, 0.0), (p > 0).astype(float), np.zeros_like(p)


@dataclass(frozen=True)
class MlpParams:
    """Weights W_i (h_i x h_{i-1}), biases b_i, activation and data statistics."""

    layer_dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: Activation = Activation.TANH
    norm: Optional[NormStats] = None
    train_config_echo: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        weights = tuple(np.array(w, dtype=float, ndmin=2) for w in self.weights)
        biases = tuple(np.array(b, dtype=float).ravel() for b in self.biases)
        if len(dims) < 2 or not len(weights) == len(biases) == len(dims) - 1:
            raise DimensionError("layer count", len(dims) - 1, len(weights))
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i + 1], dims[i]):
                raise DimensionError(
                    f"weights of layer {i}", (dims[i + 1], dims[i]), w.shape
                )
            if b.shape != (dims[i + 1],):
                raise DimensionError(f"biases of layer {i}", (dims[i + 1],), b.shape)
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} parameters must be finite")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def state_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0] - self.layer_dims[-1]

    def with_arrays(self, weights, biases) -> "MlpParams":
        return replace(self, weights=tuple(weights), biases=tuple(biases))


@dataclass
class ParamGradient:
    """dL/dtheta, shape-congruent with an MlpParams."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "ParamGradient":
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def scaled(self, c: float) -> "ParamGradient":
        return ParamGradient(
            [c * w for w in self.weights], [c * b for b in self.biases]
        )

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))


@dataclass
class ForwardCache:
    """Per-layer inputs, pre-activations and activation slopes of one forward pass."""

    layer_inputs: List[np.ndarray]
    pre: List[np.ndarray]
    slope: List[np.ndarray]
    curvature: List[np.ndarray]


def init(layer_dims: Sequence[int], activation="tanh", seed: int = 0) -> MlpParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(dims), tuple(weights), tuple(biases), Activation(activation))


def _inputs(params: MlpParams, x, u) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    U = np.atleast_2d(u)
    if U.shape[0] == 1 and X.shape[0] > 1:
        U = np.broadcast_to(U, (X.shape[0], U.shape[1]))
    Z = np.concatenate([X, U], axis=1)
    if Z.shape[1] != params.layer_dims[0] or X.shape[1] != params.state_dim:
        raise DimensionError(
            "network input [x, u]",
            (params.state_dim, params.input_dim),
            (X.shape[1], U.shape[1]),
        )
    return Z, single


def forward_with_cache(
    params: MlpParams, Z: np.ndarray
) -> Tuple[np.ndarray, ForwardCache]:
    """Batched forward pass over the rows of Z, keeping what backprop needs."""
    cache = ForwardCache([], [], [], [])
    a = Z
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        cache.layer_inputs.append(a)
        p = a @ W.T + b
        if i == last:
            return p, cache
        a, d1, d2 = _activate(params.activation, p)
        cache.pre.append(p)
        cache.slope.append(d1)
        cache.curvature.append(d2)
    raise AssertionError("unreachable")


def backward(
    params: MlpParams, cache: ForwardCache, G: np.ndarray
) -> Tuple[ParamGradient, np.ndarray]:
    """Reverse pass: given dL/d(output) rows, return dL/dtheta and dL/dZ."""
    grads = ParamGradient.zeros_like(params)
    g = G
    for j in range(len(params.weights) - 1, -1, -1):
        grads.weights[j] = g.T @ cache.layer_inputs[j]
        grads.biases[j] = g.sum(axis=0)
        g_in = g @ params.weights[j]
        if j > 0:
            g = g_in * cache.slope[j - 1]
    return grads, g_in


def forward(params: MlpParams, x, u) -> np.ndarray:
    """f_NN(x, u); rows of x (and u) are evaluated independently."""
    Z, single = _inputs(params, x, u)
    out, _ = forward_with_cache(params, Z)
    return out[0] if single else out


def _tangents(params: MlpParams, cache: ForwardCache, n: int):
    """Forward tangent recursion N_{j+1} = W_{j+1} D_j N_j, N_0 = W_0[:, :d_x]."""
    d_x = params.state_dim
    W0x = params.weights[0][:, :d_x]
    N = [np.broadcast_to(W0x, (n,) + W0x.shape)]
    M = []
    for j, W in enumerate(params.weights[1:]):
        M.append(cache.slope[j][:, :, None] * N[j])
        N.append(np.einsum("ij,njk->nik", W, M[j]))
    return N, M


def state_jacobian(params: MlpParams, x, u) -> np.ndarray:
    """Exact df_NN/dx by the chain rule (batched when x has rows)."""
    Z, single = _inputs(params, x, u)
    _, cache = forward_with_cache(params, Z)
    N, _ = _tangents(params, cache, Z.shape[0])
    J = np.array(N[-1])
    return J[0] if single else J


def jac_loss_and_grad_batch(
    params: MlpParams, X_ss, U_ss, J_refs, weights=None
) -> Tuple[float, ParamGradient]:
    """Mean over points of w_n ||J_NN(x_ss, u_ss) - J_ref||_F^2 and its exact
    gradient; ``weights`` default to 1."""
    Z, _ = _inputs(params, np.atleast_2d(X_ss), np.atleast_2d(U_ss))
    J_refs = np.asarray(J_refs, dtype=float).reshape(Z.shape[0], params.state_dim, -1)
    n = Z.shape[0]
    d_x = params.state_dim
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != (n,):
        raise DimensionError("Jacobian weights", (n,), w.shape)
    _, cache = forward_with_cache(params, Z)
    N, M = _tangents(params, cache, n)
    diff = N[-1] - J_refs
    loss = float(np.sum(w * np.sum(diff * diff, axis=(1, 2))) / n)

    grads = ParamGradient.zeros_like(params)
    W = params.weights
    N_bar = 2.0 * w[:, None, None] * diff / n
    a_bar = np.zeros_like(cache.pre[-1]) if cache.pre else None
    for j in range(len(W) - 2, -1, -1):
        grads.weights[j + 1] += np.einsum("nik,njk->ij", N_bar, M[j])
        M_bar = np.einsum("ij,nik->njk", W[j + 1], N_bar)
        s_bar = np.sum(M_bar * N[j], axis=2)
        N_bar = cache.slope[j][:, :, None] * M_bar
        p_bar = a_bar * cache.slope[j] + s_bar * cache.curvature[j]
        grads.weights[j] += p_bar.T @ cache.layer_inputs[j]
        grads.biases[j] += p_bar.sum(axis=0)
        a_bar = p_bar @ W[j]
    grads.weights[0][:, :d_x] += N_bar.sum(axis=0)
    return loss, grads


def jac_loss_and_grad(params: MlpParams, x_ss, u, J_ref) -> Tuple[float, ParamGradient]:
    """L_jac = ||J_NN(x_ss, u) - J_ref||_F^2 with its exact gradient."""
    x_ss = np.asarray(x_ss, dtype=float)
    J_ref = np.asarray(J_ref, dtype=float)
    if J_ref.shape != (params.state_dim, params.state_dim):
        raise DimensionError("J_ref", (params.state_dim, params.state_dim), J_ref.shape)
    return jac_loss_and_grad_batch(params, x_ss[None, :], np.atleast_2d(u), J_ref[None])


def relative_jac_weights(J_refs, floor: float = 1.0) -> np.ndarray:
    """1 / max(||J_ref||_F^2, floor) per point; with these weights the
    Jacobian loss is a mean squared relative error."""
    J = np.asarray(J_refs, dtype=float)
    sq = np.sum(J.reshape(J.shape[0], -1) ** 2, axis=1)
    return 1.0 / np.maximum(sq, floor)


def grad_forward_loss(params: MlpParams, tape, residuals) -> ParamGradient:
    """Exact gradient of the window MSE through every recorded RK4 stage.

    ``residuals`` are predicted minus reference states, shaped like the
    rollout output (K x d_x, or B x K x d_x for a batch). The loss is the
    batch mean of (1/K) sum_k ||r_k||^2.
    """
    if tape is None:
        raise TapeMissing()
    r = np.asarray(residuals, dtype=float)
    if r.ndim == 2:
        r = r[None]
    B, K, d_x = r.shape
    if K != len(tape.steps):
        raise DimensionError("residual window", len(tape.steps), K)
    h = tape.h
    grads = ParamGradient.zeros_like(params)
    adj = np.zeros((B, d_x))
    for k in range(K - 1, -1, -1):
        adj = adj + 2.0 * r[:, k] / (K * B)
        c1, c2, c3, c4 = tape.steps[k]
        dk = [h / 6.0 * adj, h / 3.0 * adj, h / 3.0 * adj, h / 6.0 * adj]
        dx = adj.copy()
        # stage i is evaluated at x + c_i * k_{i-1}
        feed = [None, h / 2.0, h / 2.0, h]
        for i, cache in ((3, c4), (2, c3), (1, c2), (0, c1)):
            g, g_in = backward(params, cache, dk[i])
            grads = grads + g
            gx = g_in[:, :d_x]
            dx += gx
            if i > 0:
                dk[i - 1] = dk[i - 1] + feed[i] * gx
        adj = dx
    return grads


# Model files ----------------------------------------------------------------


def to_dict(params: MlpParams) -> Dict[str, Any]:
    if params.norm is None:
        raise ValueError("model has no normalization statistics")
    return {
        "layer_dims": list(params.layer_dims),
        "activation": params.activation.value,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "norm": params.norm.to_dict(),
        "train_config_echo": params.train_config_echo,
    }


def from_dict(data: Dict[str, Any], source: str = "<memory>") -> MlpParams:
    for key in ("layer_dims", "activation", "weights", "biases", "norm"):
        if data.get(key) is None:
            raise FormatError(source, f"missing field '{key}'")
    dims = data["layer_dims"]
    if len(data["weights"]) != len(dims) - 1 or len(data["biases"]) != len(dims) - 1:
        raise FormatError(source, f"expected {len(dims) - 1} layers")
    weights, biases = [], []
    for i, (w, b) in enumerate(zip(data["weights"], data["biases"])):
        try:
            W = np.array(w, dtype=float, ndmin=2)
            bias = np.array(b, dtype=float)
        except ValueError as e:
            raise FormatError(source, f"layer {i}: ragged arrays ({e})")
        if W.shape != (dims[i + 1], dims[i]) or bias.shape != (dims[i + 1],):
            raise FormatError(
                source,
                f"layer {i}: weight shape {W.shape} / bias shape {bias.shape} do not "
                f"match layer_dims {dims[i]}->{dims[i + 1]}",
            )
        weights.append(W)
        biases.append(bias)
    try:
        norm = NormStats.from_dict(data["norm"])
        activation = Activation(data["activation"])
    except (KeyError, ValueError) as e:
        raise FormatError(source, f"bad norm or activation: {e}")
    return MlpParams(
        tuple(dims),
        tuple(weights),
        tuple(biases),
        activation,
        norm,
        dict(data.get("train_config_echo") or {}),
    )


def save_model(params: MlpParams, path) -> Path:
    """Write the model JSON (floats keep full double precision)."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(to_dict(params), f, indent=1)
    except OSError as e:
        raise DataIOError(path, "cannot write model", e) from e
    logger.info(f"Saved model {list(params.layer_dims)} to {path}")
    return path


def load_model(path) -> MlpParams:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise DataIOError(path, "model file not found", e) from e
    except json.JSONDecodeError as e:
        raise FormatError(path, f"invalid JSON: {e}") from e
    except OSError as e:
        raise DataIOError(path, "cannot read model", e) from e
    return from_dict(data, str(path))
