"""
DLG gradient-inversion attacker.

Plain fixed-step gradient descent on the gradient-matching objective, with the
full per-iteration error trace kept for the complexity estimators.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from app.config.experiment import AttackConfig, AttackInit, MechanismConfig, MetricKind
from app.core.errors import DivergedError, InvalidDimensionError, InvalidInputError
from app.core.models import ModelSpec, grad_match_input_grad, param_grad_arrays
from app.core.numerics import Matrix, RngStream, Vector
from app.services.federated import ClientDataset

logger = logging.getLogger(__name__)

PSNR_CAP = 300.0
PSNR_ZERO_MSE = 1e-30


@dataclass(frozen=True)
class ErrorMetric:
    kind: MetricKind = MetricKind.MSE
    peak: float = 1.0

    @property
    def higher_is_better(self) -> bool:
        return self.kind is MetricKind.PSNR

    @classmethod
    def from_config(cls, config: AttackConfig) -> "ErrorMetric":
        return cls(config.metric, config.psnr_peak)


def _psnr_from_mse(mse: npt.NDArray, peak: float) -> npt.NDArray:
    mse = np.asarray(mse, dtype=np.float64)
    safe = np.where(mse < PSNR_ZERO_MSE, 1.0, mse)
    return np.where(mse < PSNR_ZERO_MSE, PSNR_CAP, 10.0 * np.log10(peak * peak / safe))


def error(metric: ErrorMetric, x_hat: npt.ArrayLike, x: npt.ArrayLike) -> float:
    """d(x_hat, x) under the configured metric."""
    a = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    b = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidDimensionError(f"cannot compare shapes {a.shape} and {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if metric.kind is MetricKind.MSE:
        return mse
    return float(_psnr_from_mse(mse, metric.peak))


def per_sample_errors(metric: ErrorMetric, X_hat: Matrix, X: Matrix) -> Vector:
    mse = np.mean((X_hat - X) ** 2, axis=1)
    if metric.kind is MetricKind.MSE:
        return mse
    return _psnr_from_mse(mse, metric.peak)


@dataclass(frozen=True)
class AttackTrace:
    per_iter_errors: Matrix
    per_iter_grad_mismatch: Vector
    per_iter_objective: Vector
    final_reconstruction: Tuple[Vector, ...]
    converged_iter: Optional[int]
    metric: MetricKind = MetricKind.MSE
    labels: Tuple[int, ...] = ()
    iterates: Optional[npt.NDArray[np.float64]] = None

    @property
    def iterations(self) -> int:
        return int(self.per_iter_errors.shape[0])

    @property
    def samples(self) -> int:
        return int(self.per_iter_errors.shape[1])

    def mean_errors(self) -> Vector:
        return self.per_iter_errors.mean(axis=1)

    def final_errors(self) -> Vector:
        return self.per_iter_errors[-1].copy()

    def to_dict(self, stride: int = 1) -> Dict[str, Any]:
        """JSON-ready view; keeps every stride-th iteration (1-based t = 1, 1+k, ...)."""
        if stride < 1:
            raise InvalidInputError(f"trace stride must be >= 1, got {stride}")
        rows = list(range(0, self.iterations, stride))
        return {
            "metric": self.metric.value,
            "iterations": [r + 1 for r in rows],
            "labels": list(self.labels),
            "per_iter_errors": self.per_iter_errors[rows].tolist(),
            "per_iter_grad_mismatch": self.per_iter_grad_mismatch[rows].tolist(),
            "per_iter_objective": self.per_iter_objective[rows].tolist(),
            "final_reconstruction": [x.tolist() for x in self.final_reconstruction],
            "converged_iter": self.converged_iter,
        }


def matched_attack_config(config: AttackConfig, mechanism: MechanismConfig) -> AttackConfig:
    """Sphere-normalized releases only carry a direction; match directions against them."""
    if mechanism.normalize_to_sphere and not config.normalize_gradients:
        logger.debug("Release is sphere-normalized; attacker switches to direction matching")
        return config.model_copy(update={"normalize_gradients": True})
    return config


def first_converged(mean_errors: Sequence[float], tau: float, higher_is_better: bool = False) -> Optional[int]:
    for t, value in enumerate(mean_errors, start=1):
        if (value >= tau) if higher_is_better else (value <= tau):
            return t
    return None


def _objective(param_grad: Vector, target: Vector, normalize: bool) -> float:
    if normalize:
        residual = param_grad / np.linalg.norm(param_grad) - target / np.linalg.norm(target)
    else:
        residual = param_grad - target
    return 0.5 * float(residual @ residual)


def _initial_point(config: AttackConfig, shape: Tuple[int, int], rng: RngStream, warm_start) -> Matrix:
    if config.init is AttackInit.GAUSSIAN_RANDOM:
        return config.init_scale * rng.standard_normal(shape)
    if config.init is AttackInit.ZEROS:
        return np.zeros(shape)
    if warm_start is None:
        raise InvalidInputError("init = warm_start needs a starting reconstruction")
    start = np.array(warm_start, dtype=np.float64)
    if start.size != shape[0] * shape[1]:
        raise InvalidDimensionError(f"warm start has {start.size} entries, expected {shape[0]} x {shape[1]}")
    return start.reshape(shape)


def _descend(
    spec: ModelSpec,
    theta: Vector,
    observed_grad: Vector,
    labels: List[int],
    x0: Matrix,
    config: AttackConfig,
    scorer: Callable[[Matrix], Vector],
) -> AttackTrace:
    """
    The optimization path. It sees only public quantities (model, theta,
    observed gradient, labels, shapes); the target enters through scorer alone.
    """
    T = config.max_iters
    n = x0.shape[0]
    metric = MetricKind(config.metric)
    errors = np.zeros((T, n))
    objective = np.zeros(T)
    param_grads = np.zeros((T, spec.param_dim))
    iterates = np.zeros((T,) + x0.shape) if config.record_iterates else None
    x = x0.copy()

    def partial(rows: int) -> AttackTrace:
        mismatch = np.linalg.norm(param_grads[:rows] - param_grads[rows - 1], axis=1) if rows else np.zeros(0)
        return AttackTrace(
            per_iter_errors=errors[:rows].copy(),
            per_iter_grad_mismatch=mismatch,
            per_iter_objective=objective[:rows].copy(),
            final_reconstruction=tuple(row.copy() for row in x),
            converged_iter=None,
            metric=metric,
            labels=tuple(labels),
            iterates=None if iterates is None else iterates[:rows].copy(),
        )

    for t in range(T):
        step = grad_match_input_grad(spec, theta, x, labels, observed_grad, normalize=config.normalize_gradients)
        x = x - config.step_size * step.reshape(x.shape)
        if config.clamp_box:
            np.clip(x, 0.0, 1.0, out=x)
        if not np.all(np.isfinite(x)):
            raise DivergedError(f"reconstruction became non-finite at iteration {t + 1}", partial(t))
        g = param_grad_arrays(spec, theta, x, labels)
        value = _objective(g, observed_grad, config.normalize_gradients)
        if not math.isfinite(value):
            raise DivergedError(f"grad-match objective became non-finite at iteration {t + 1}", partial(t))
        objective[t] = value
        param_grads[t] = g
        errors[t] = scorer(x)
        if iterates is not None:
            iterates[t] = x
        logger.debug(f"DLG iter {t + 1}: objective={value:.6g} mean_error={errors[t].mean():.6g}")

    trace = partial(T)
    converged = first_converged(trace.mean_errors(), config.tau, metric is MetricKind.PSNR)
    return AttackTrace(
        per_iter_errors=trace.per_iter_errors,
        per_iter_grad_mismatch=trace.per_iter_grad_mismatch,
        per_iter_objective=trace.per_iter_objective,
        final_reconstruction=trace.final_reconstruction,
        converged_iter=converged,
        metric=metric,
        labels=trace.labels,
        iterates=trace.iterates,
    )


def run_dlg(
    spec: ModelSpec,
    theta: npt.ArrayLike,
    observed_grad: npt.ArrayLike,
    target: ClientDataset,
    config: AttackConfig,
    rng: Optional[RngStream] = None,
    warm_start: Optional[npt.ArrayLike] = None,
) -> AttackTrace:
    """
    Reconstruct the target's inputs from the gradient the server observed.

    Labels are treated as known; only the inputs are optimized. The target
    samples are used to score each iterate and nothing else.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    observed = np.asarray(observed_grad, dtype=np.float64).reshape(-1)
    if observed.size != spec.param_dim:
        raise InvalidDimensionError(f"observed gradient has {observed.size} entries, expected {spec.param_dim}")
    if target.input_dim != spec.input_dim:
        raise InvalidDimensionError(f"target input_dim {target.input_dim} != model input_dim {spec.input_dim}")

    rng = rng or RngStream(config.seed)
    labels = target.labels
    shape = (len(labels), spec.input_dim)
    x0 = _initial_point(config, shape, rng, warm_start)

    truth = target.features()
    metric = ErrorMetric.from_config(config)

    def scorer(x_hat: Matrix) -> Vector:
        return per_sample_errors(metric, x_hat, truth)

    return _descend(spec, theta, observed, labels, x0, config, scorer)
