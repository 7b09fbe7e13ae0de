"""
Small differentiable models: multinomial logistic regression and a
one-hidden-layer tanh MLP.

Provides the FedSGD loss/gradient in the parameters and the gradient-matching
objective that the inversion attacker minimizes over reconstructed inputs.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from app.core.errors import DegenerateInputError, InvalidDimensionError, InvalidInputError
from app.core.numerics import Matrix, RngStream, Vector, ensure_finite, finite_diff_grad

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    """Supported model families"""
    LOGISTIC_REGRESSION = "logistic_regression"
    MLP1 = "mlp1"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_dim: int
    num_classes: int
    hidden_dim: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.input_dim < 1:
            raise InvalidDimensionError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kind is ModelKind.MLP1:
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise InvalidDimensionError("mlp1 requires hidden_dim >= 1")
        elif self.hidden_dim is not None:
            raise InvalidInputError("hidden_dim is only meaningful for mlp1")

    @property
    def param_dim(self) -> int:
        d, c = self.input_dim, self.num_classes
        if self.kind is ModelKind.LOGISTIC_REGRESSION:
            return c * d + c
        h = self.hidden_dim
        return h * d + h + c * h + c


@dataclass(frozen=True)
class LabeledSample:
    x: Vector
    y: int

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        ensure_finite(x, name="sample x")
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise InvalidInputError("sample features must lie in [0, 1]")
        if int(self.y) < 0:
            raise InvalidInputError(f"label must be non-negative, got {self.y}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


def init_params(spec: ModelSpec, rng: RngStream, scale: float = 0.5) -> Vector:
    """Seeded Gaussian parameter vector."""
    return scale * rng.standard_normal(spec.param_dim)


def unpack_params(spec: ModelSpec, theta: npt.ArrayLike) -> Dict[str, Matrix]:
    """Per-layer views into the flat parameter vector."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size != spec.param_dim:
        raise InvalidDimensionError(f"theta has {theta.size} entries, expected {spec.param_dim}")
    d, c = spec.input_dim, spec.num_classes
    if spec.kind is ModelKind.LOGISTIC_REGRESSION:
        return {
            "W": theta[: c * d].reshape(c, d),
            "b": theta[c * d:],
        }
    h = spec.hidden_dim
    o = 0
    w1 = theta[o: o + h * d].reshape(h, d)
    o += h * d
    b1 = theta[o: o + h]
    o += h
    w2 = theta[o: o + c * h].reshape(c, h)
    o += c * h
    b2 = theta[o:]
    return {"W1": w1, "b1": b1, "W2": w2, "b2": b2}


def stack_batch(spec: ModelSpec, batch: Sequence[LabeledSample]) -> Tuple[Matrix, npt.NDArray[np.int64]]:
    if len(batch) == 0:
        raise InvalidInputError("batch must be non-empty")
    X = np.stack([s.x for s in batch])
    Y = np.array([s.y for s in batch], dtype=np.int64)
    _check_inputs(spec, X, Y)
    return X, Y


def _check_inputs(spec: ModelSpec, X: Matrix, Y: npt.NDArray[np.int64]) -> None:
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise InvalidDimensionError(f"inputs must have shape (n, {spec.input_dim}), got {X.shape}")
    if Y.shape != (X.shape[0],):
        raise InvalidDimensionError(f"expected {X.shape[0]} labels, got {Y.shape}")
    if np.any(Y < 0) or np.any(Y >= spec.num_classes):
        raise InvalidInputError(f"labels must lie in [0, {spec.num_classes})")


def _log_softmax(logits: Matrix) -> Matrix:
    # max-subtraction keeps exp() from overflowing
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _loss_and_grad_arrays(spec: ModelSpec, theta: Vector, X: Matrix, Y) -> Tuple[float, Vector, Matrix]:
    """Mean cross-entropy, flat parameter gradient and class probabilities."""
    p = unpack_params(spec, theta)
    n = X.shape[0]
    rows = np.arange(n)
    if spec.kind is ModelKind.LOGISTIC_REGRESSION:
        logp = _log_softmax(X @ p["W"].T + p["b"])
        probs = np.exp(logp)
        r = probs.copy()
        r[rows, Y] -= 1.0
        r /= n
        grad = np.concatenate([(r.T @ X).ravel(), r.sum(axis=0)])
    else:
        a = np.tanh(X @ p["W1"].T + p["b1"])
        logp = _log_softmax(a @ p["W2"].T + p["b2"])
        probs = np.exp(logp)
        r = probs.copy()
        r[rows, Y] -= 1.0
        r /= n
        g_w2 = r.T @ a
        g_b2 = r.sum(axis=0)
        dz1 = (r @ p["W2"]) * (1.0 - a * a)
        g_w1 = dz1.T @ X
        g_b1 = dz1.sum(axis=0)
        grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
    loss = float(-logp[rows, Y].mean())
    return loss, grad, probs


def loss_and_param_grad(spec: ModelSpec, theta: npt.ArrayLike, batch: Sequence[LabeledSample]) -> Tuple[float, Vector]:
    """Mean cross-entropy over the batch and its gradient in theta."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    ensure_finite(theta, name="theta")
    X, Y = stack_batch(spec, batch)
    loss, grad, _ = _loss_and_grad_arrays(spec, theta, X, Y)
    return loss, grad


def param_grad_arrays(spec: ModelSpec, theta: npt.ArrayLike, X: npt.ArrayLike, Y: Sequence[int]) -> Vector:
    """Parameter gradient for raw (unvalidated-range) inputs, e.g. attacker candidates."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    X, Y = _shape_candidate(spec, X, Y)
    return _loss_and_grad_arrays(spec, theta, X, Y)[1]


def _shape_candidate(spec: ModelSpec, x_hat: npt.ArrayLike, y: Sequence[int]) -> Tuple[Matrix, npt.NDArray[np.int64]]:
    Y = np.asarray(y, dtype=np.int64).reshape(-1)
    x = np.asarray(x_hat, dtype=np.float64)
    if x.size != Y.size * spec.input_dim:
        raise InvalidDimensionError(
            f"x_hat has {x.size} entries, expected {Y.size} x {spec.input_dim}"
        )
    X = x.reshape(Y.size, spec.input_dim)
    _check_inputs(spec, X, Y)
    return X, Y


def _check_target(spec: ModelSpec, g_target: npt.ArrayLike) -> Vector:
    g = np.asarray(g_target, dtype=np.float64).reshape(-1)
    if g.size != spec.param_dim:
        raise InvalidDimensionError(f"g_target has {g.size} entries, expected {spec.param_dim}")
    return g


def _unit(g: Vector, what: str) -> Tuple[Vector, float]:
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        raise DegenerateInputError(f"{what} is zero; direction matching is undefined")
    return g / norm, norm


def _residual(spec, theta, X, Y, g_target, normalize):
    _, g, probs = _loss_and_grad_arrays(spec, theta, X, Y)
    if not normalize:
        return g - g_target, g, probs
    g_unit, _ = _unit(g, "candidate gradient")
    t_unit, _ = _unit(g_target, "observed gradient")
    return g_unit - t_unit, g, probs


def grad_match_value(
    spec: ModelSpec,
    theta: npt.ArrayLike,
    x_hat: npt.ArrayLike,
    y: Sequence[int],
    g_target: npt.ArrayLike,
    normalize: bool = False,
) -> float:
    """Half squared distance between the candidate's gradient and the target gradient."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    X, Y = _shape_candidate(spec, x_hat, y)
    target = _check_target(spec, g_target)
    residual, _, _ = _residual(spec, theta, X, Y, target, normalize)
    return 0.5 * float(residual @ residual)


def grad_match_input_grad(
    spec: ModelSpec,
    theta: npt.ArrayLike,
    x_hat: npt.ArrayLike,
    y: Sequence[int],
    g_target: npt.ArrayLike,
    normalize: bool = False,
    h: float = 1e-5,
) -> Vector:
    """
    Gradient of grad_match_value with respect to the flattened x_hat.

    Closed form for logistic regression; central differences for mlp1.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    X, Y = _shape_candidate(spec, x_hat, y)
    target = _check_target(spec, g_target)

    if spec.kind is ModelKind.MLP1:
        def objective(flat: Vector) -> float:
            return grad_match_value(spec, theta, flat, Y, target, normalize)
        return finite_diff_grad(objective, X.ravel(), h)

    residual, g, probs = _residual(spec, theta, X, Y, target, normalize)
    if normalize:
        g_unit, g_norm = _unit(g, "candidate gradient")
        # chain rule through g / ||g||
        residual = (residual - g_unit * float(g_unit @ residual)) / g_norm

    n = X.shape[0]
    d, c = spec.input_dim, spec.num_classes
    W = unpack_params(spec, theta)["W"]
    e_w = residual[: c * d].reshape(c, d)
    e_b = residual[c * d:]

    r = probs.copy()
    r[np.arange(n), Y] -= 1.0
    v = X @ e_w.T + e_b
    # softmax Jacobian applied row-wise: diag(p) v - p (p . v)
    jv = probs * v - probs * (probs * v).sum(axis=1, keepdims=True)
    grad = (r @ e_w + jv @ W) / n
    return grad.ravel()


def per_sample_grad(spec: ModelSpec, theta: npt.ArrayLike, x: npt.ArrayLike, y: int) -> Vector:
    return param_grad_arrays(spec, theta, np.asarray(x, dtype=np.float64).reshape(1, -1), [y])
