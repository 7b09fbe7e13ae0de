"""
Empirical estimators for attack complexity, privacy leakage, gradient
distortion, protection complexity and the assumption constants
(bi-Lipschitz c_a/c_b, self-bounded regret p/c_0/c_2).
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from app.config.experiment import ComplexityVariant, MechanismConfig, MetricKind
from app.core.errors import (
    DegenerateFitError,
    EstimationFailedError,
    InvalidDimensionError,
    InvalidInputError,
)
from app.core.models import ModelSpec, per_sample_grad
from app.core.numerics import RngStream, Vector, l2_norm, running_mean
from app.services import protection
from app.services.attack import AttackTrace

logger = logging.getLogger(__name__)

UNATTAINED = "unattained"
AttackComplexity = Union[int, Literal["unattained"]]

# Running means are compared against tau with this relative slack so a
# mean that equals tau analytically is not lost to rounding.
_TAU_SLACK = 1e-12


@dataclass(frozen=True)
class ComplexityReport:
    s_k_tau: AttackComplexity
    epsilon_p: float
    delta_k: float
    protection_c: float
    tau: float
    gamma: float
    dataset_size: int
    variant: ComplexityVariant
    replicates: int = 1
    clamped: bool = True
    sphere_frame: bool = False

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row["variant"] = self.variant.value
        return row


@dataclass(frozen=True)
class ConstantEstimates:
    c_a_hat: float
    c_b_hat: float
    p_hat: float
    c0_hat: float
    c2_hat: float
    sample_count: int

    def __post_init__(self):
        if not (0 < self.c_a_hat <= self.c_b_hat):
            raise InvalidInputError("bi-Lipschitz estimates must satisfy 0 < c_a <= c_b")
        if not (0 < self.p_hat <= 1):
            raise InvalidInputError("regret exponent must lie in (0, 1]")
        if not (0 < self.c0_hat <= self.c2_hat):
            raise InvalidInputError("regret constants must satisfy 0 < c0 <= c2")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_traces(traces: Sequence[AttackTrace]) -> None:
    if not traces:
        raise InvalidInputError("at least one attack trace is required")
    shape = traces[0].per_iter_errors.shape
    for trace in traces[1:]:
        if trace.per_iter_errors.shape != shape:
            raise InvalidInputError(
                f"inconsistent trace shapes {trace.per_iter_errors.shape} and {shape}"
            )
    metrics = {trace.metric for trace in traces}
    if len(metrics) != 1:
        raise InvalidInputError("traces mix error metrics")


def _mean_error_curve(traces: Sequence[AttackTrace]) -> Vector:
    """Error per iteration averaged over seeds and samples."""
    return np.mean(np.stack([t.per_iter_errors for t in traces]), axis=(0, 2))


def attack_complexity(
    traces: Sequence[AttackTrace],
    tau: float,
    variant: ComplexityVariant = ComplexityVariant.RUNNING_MEAN,
) -> AttackComplexity:
    """
    Smallest T' at which the averaged reconstruction error reaches tau.

    running_mean averages over iterations 1..T' as well; last_iterate looks at
    iteration T' alone. PSNR traces are treated as higher-is-better.
    """
    _check_traces(traces)
    if not tau > 0:
        raise InvalidInputError(f"tau must be > 0, got {tau}")
    curve = _mean_error_curve(traces)
    variant = ComplexityVariant(variant)
    if variant is ComplexityVariant.RUNNING_MEAN:
        curve = running_mean(curve)
    if traces[0].metric is MetricKind.PSNR:
        hits = np.nonzero(curve >= tau * (1.0 - _TAU_SLACK))[0]
    else:
        hits = np.nonzero(curve <= tau * (1.0 + _TAU_SLACK))[0]
    return int(hits[0]) + 1 if hits.size else UNATTAINED


def complexity_as_number(value: AttackComplexity, t_max: int) -> int:
    """Unattained maps to T_max + 1 for order statistics."""
    return t_max + 1 if value == UNATTAINED else int(value)


def privacy_leakage(
    traces: Sequence[AttackTrace],
    tau: float,
    T: Optional[int] = None,
    clamp: bool = True,
) -> float:
    """1 - mean over seeds, samples and iterations 1..T of d(X~, X)/tau."""
    if not tau > 0:
        raise InvalidInputError(f"tau must be > 0, got {tau}")
    _check_traces(traces)
    if traces[0].metric is not MetricKind.MSE:
        raise InvalidInputError("privacy leakage needs a distance metric (mse)")
    length = traces[0].iterations
    T = length if T is None else T
    if not 1 <= T <= length:
        raise InvalidInputError(f"T must lie in [1, {length}], got {T}")
    ratios = np.stack([t.per_iter_errors[:T] for t in traces]) / tau
    if clamp:
        ratios = np.clip(ratios, 0.0, 1.0)
    return float(1.0 - ratios.mean())


def gradient_distortion(w_original: npt.ArrayLike, w_protected: npt.ArrayLike) -> float:
    """Delta = ||W^O - W^D||_2."""
    a = np.asarray(w_original, dtype=np.float64).reshape(-1)
    b = np.asarray(w_protected, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidDimensionError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    return l2_norm(a - b)


def protection_complexity_mc(
    mechanism: MechanismConfig,
    w_original: npt.ArrayLike,
    trials: int,
    rng: RngStream,
    debias: bool = False,
) -> float:
    """
    Monte-Carlo mean of ||W^D - W^O||^2 over independent releases.

    With debias, releases are rescaled to be unbiased for the (projected)
    input first, which is the distortion the optimal-rate results describe.
    """
    if trials < 1:
        raise InvalidInputError(f"trials must be >= 1, got {trials}")
    original = protection.comparable_original(mechanism, w_original)
    releases = protection.apply_many(mechanism, w_original, trials, rng)
    if debias:
        releases = releases * protection.release_scale(mechanism, original.size)
    diffs = releases - original[None, :]
    return float(np.mean(np.einsum("ij,ij->i", diffs, diffs)))


def bilipschitz_from_map(
    gradient_map: Callable[[Vector], Vector],
    sample_source: Callable[[RngStream], Vector],
    pairs: int,
    rng: RngStream,
) -> tuple:
    """(min, max) of ||x1 - x2|| / ||g(x1) - g(x2)|| over sampled pairs."""
    if pairs < 2:
        raise InvalidInputError(f"need at least 2 pairs, got {pairs}")
    ratios: List[float] = []
    skipped = 0
    for k in range(pairs):
        pair_rng = rng.derive(k)
        x1 = np.asarray(sample_source(pair_rng), dtype=np.float64)
        x2 = np.asarray(sample_source(pair_rng), dtype=np.float64)
        denom = float(np.linalg.norm(gradient_map(x1) - gradient_map(x2)))
        numer = float(np.linalg.norm(x1 - x2))
        if denom == 0.0 or numer == 0.0:
            skipped += 1
            continue
        ratios.append(numer / denom)
    if skipped:
        logger.warning(f"Skipped {skipped}/{pairs} pairs with identical gradients or inputs")
    if not ratios:
        raise EstimationFailedError("every sampled pair had identical gradients")
    return min(ratios), max(ratios)


def uniform_box_source(dim: int) -> Callable[[RngStream], Vector]:
    def draw(rng: RngStream) -> Vector:
        return rng.uniform(0.0, 1.0, dim)
    return draw


def estimate_bilipschitz(
    spec: ModelSpec,
    theta: npt.ArrayLike,
    sample_source: Optional[Callable[[RngStream], Vector]],
    pairs: int,
    rng: RngStream,
    label: int = 0,
) -> tuple:
    """Bi-Lipschitz extrema of x -> grad_theta L(theta; x, label); a sampled lower/upper estimate."""
    source = sample_source or uniform_box_source(spec.input_dim)
    return bilipschitz_from_map(lambda x: per_sample_grad(spec, theta, x, label), source, pairs, rng)


def fit_regret(trace_or_mismatch: Union[AttackTrace, npt.ArrayLike]) -> tuple:
    """
    Fit cumsum(mismatch)(T) ~ c * T^p by least squares in log-log space.

    Returns (p_hat, c0_hat, c2_hat) with c0/c2 the min/max of cumsum(T)/T^p.
    """
    if isinstance(trace_or_mismatch, AttackTrace):
        mismatch = trace_or_mismatch.per_iter_grad_mismatch
    else:
        mismatch = np.asarray(trace_or_mismatch, dtype=np.float64).reshape(-1)
    if mismatch.size < 10:
        raise InvalidInputError(f"regret fit needs at least 10 iterations, got {mismatch.size}")
    cumulative = np.cumsum(mismatch)
    T = np.arange(1, cumulative.size + 1, dtype=np.float64)
    usable = cumulative > 0
    if usable.sum() < 2:
        raise DegenerateFitError("cumulative gradient mismatch is zero")
    slope, _ = np.polyfit(np.log(T[usable]), np.log(cumulative[usable]), 1)
    p_hat = float(slope)
    scaled = cumulative[usable] / T[usable] ** p_hat
    return p_hat, float(scaled.min()), float(scaled.max())


def estimate_constants(
    spec: ModelSpec,
    theta: npt.ArrayLike,
    traces: Sequence[AttackTrace],
    pairs: int,
    rng: RngStream,
    label: int = 0,
) -> ConstantEstimates:
    """Bi-Lipschitz and regret constants packaged for the bound calculators."""
    c_a, c_b = estimate_bilipschitz(spec, theta, None, pairs, rng, label)
    fits = []
    for trace in traces:
        try:
            fits.append(fit_regret(trace))
        except (DegenerateFitError, InvalidInputError) as e:
            logger.warning(f"Skipping trace in regret fit: {e}")
    if not fits:
        raise EstimationFailedError("no trace supported a regret fit")
    p_hat = float(np.mean([f[0] for f in fits]))
    if not 0 < p_hat <= 1:
        clipped = min(max(p_hat, 1e-6), 1.0)
        logger.warning(f"Regret exponent {p_hat:.4g} outside (0, 1]; clipped to {clipped:.4g}")
        p_hat = clipped
    # constants re-evaluated at the pooled exponent
    scaled = []
    for trace in traces:
        cumulative = np.cumsum(trace.per_iter_grad_mismatch)
        T = np.arange(1, cumulative.size + 1, dtype=np.float64)
        usable = cumulative > 0
        if usable.any():
            scaled.append(cumulative[usable] / T[usable] ** p_hat)
    pooled = np.concatenate(scaled)
    return ConstantEstimates(
        c_a_hat=float(c_a),
        c_b_hat=float(c_b),
        p_hat=p_hat,
        c0_hat=float(pooled.min()),
        c2_hat=float(pooled.max()),
        sample_count=pairs,
    )


def hoeffding_half_width(gamma: float, n: int) -> float:
    """sqrt(ln(2/gamma) / (2n)), the two-sided band for means of [0,1] variables."""
    if not 0 < gamma < 1:
        raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    return math.sqrt(math.log(2.0 / gamma) / (2.0 * n))


def hoeffding_violation_rate(
    population: npt.ArrayLike,
    n: int,
    resamples: int,
    gamma: float,
    rng: RngStream,
) -> float:
    """Fraction of size-n resamples whose mean leaves the Hoeffding band."""
    values = np.asarray(population, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise InvalidInputError("population must be non-empty")
    if np.any(values < 0) or np.any(values > 1):
        raise InvalidInputError("Hoeffding check needs values in [0, 1]")
    band = hoeffding_half_width(gamma, n)
    center = float(values.mean())
    idx = rng.integers(0, values.size, (resamples, n))
    deviations = np.abs(values[idx].mean(axis=1) - center)
    return float(np.mean(deviations > band))


def build_complexity_report(
    traces: Sequence[AttackTrace],
    distortions: Sequence[float],
    protection_costs: Sequence[float],
    tau: float,
    gamma: float,
    dataset_size: int,
    variant: ComplexityVariant = ComplexityVariant.RUNNING_MEAN,
    clamp: bool = True,
    sphere_frame: bool = False,
) -> ComplexityReport:
    return ComplexityReport(
        s_k_tau=attack_complexity(traces, tau, variant),
        epsilon_p=privacy_leakage(traces, tau, None, clamp),
        delta_k=float(np.mean(distortions)),
        protection_c=float(np.mean(protection_costs)),
        tau=tau,
        gamma=gamma,
        dataset_size=dataset_size,
        variant=ComplexityVariant(variant),
        replicates=len(traces),
        clamped=clamp,
        sphere_frame=sphere_frame,
    )
