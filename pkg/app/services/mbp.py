"""
Maximum Bayesian Privacy estimation by attack simulation.

For every data point d the attacker is run T_sim times against freshly
protected gradients; the success frequency estimates the posterior mass
f_{D|W}(d|w*) and the worst log ratio to the prior gives epsilon_hat.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from app.config.experiment import AttackConfig, MbpConfig, MechanismConfig, MetricKind
from app.core.errors import DivergedError, InvalidInputError
from app.core.models import ModelSpec, param_grad_arrays
from app.core.numerics import RngStream, Vector
from app.services import protection
from app.services.attack import ErrorMetric, matched_attack_config, per_sample_errors, run_dlg
from app.services.federated import ClientDataset

logger = logging.getLogger(__name__)

_MSE = ErrorMetric(MetricKind.MSE)


@dataclass(frozen=True)
class TrialRecord:
    """One simulated reconstruction; slot_errors are per-slot MSEs (None when diverged)."""
    point: int
    trial: int
    batch: Tuple[int, ...]
    slot_errors: Optional[Tuple[float, ...]]
    successes: int

    @property
    def diverged(self) -> bool:
        return self.slot_errors is None


@dataclass(frozen=True)
class ConditionalEstimate:
    success_counts: Tuple[int, ...]
    kappa_hat: Tuple[float, ...]
    t_sim: int
    batch_size: int
    trials: Tuple[TrialRecord, ...] = ()

    @property
    def denominator(self) -> int:
        return self.t_sim * self.batch_size

    @property
    def diverged_trials(self) -> int:
        return sum(1 for t in self.trials if t.diverged)


@dataclass(frozen=True)
class MbpEstimate:
    kappa_hat: Tuple[float, ...]
    kappa_smoothed: Tuple[float, ...]
    epsilon_hat: float
    zeta: float
    success_counts: Tuple[int, ...]
    trials_total: int
    prior: Tuple[float, ...]
    delta: float
    t_sim: int
    omega: float
    batch_size: int
    c_const: float
    beta: float = 0.5
    theta_round: int = 0
    diverged_trials: int = 0
    per_round_epsilon: Tuple[float, ...] = field(default=())
    reliability: Optional[float] = None
    precision: Optional[float] = None
    kappa_error: Optional[float] = None
    refined_zeta: Optional[float] = None

    
    def privacy_level(self) -> protection.PrivacyLevel:
        return protection.privacy_level_from_mbp(self.epsilon_hat, protection.PrivacySource.ESTIMATED)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilon_hat": self.epsilon_hat,
            "zeta": self.zeta,
            "success_counts": list(self.success_counts),
            "trials_total": self.trials_total,
            "kappa_hat": list(self.kappa_hat),
            "kappa_smoothed": list(self.kappa_smoothed),
            "diverged_trials": self.diverged_trials,
            "per_round_epsilon": list(self.per_round_epsilon),
            "reliability": self.reliability,
            "precision": self.precision,
            "kappa_error": self.kappa_error,
            "refined_zeta": self.refined_zeta,
            "privacy_level": self.privacy_level().to_dict(),
            "config": {
                "delta": self.delta,
                "t_sim": self.t_sim,
                "omega": self.omega,
                "batch_size": self.batch_size,
                "c_const": self.c_const,
                "prior": list(self.prior),
                "theta_round": self.theta_round,
                "beta": self.beta,
            },
        }


def uniform_prior(n: int) -> Tuple[float, ...]:
    if n < 1:
        raise InvalidInputError(f"prior needs at least one data point, got {n}")
    return tuple([1.0 / n] * n)


def _check_prior(prior: Sequence[float], n: int) -> Tuple[float, ...]:
    prior = tuple(float(p) for p in prior)
    if len(prior) != n:
        raise InvalidInputError(f"prior has {len(prior)} entries for {n} data points")
    if any(not p > 0 for p in prior):
        raise InvalidInputError("prior entries must be > 0")
    if abs(math.fsum(prior) - 1.0) > 1e-12:
        raise InvalidInputError("prior must sum to 1")
    return prior


def cyclic_batch(point: int, batch_size: int, n: int) -> Tuple[int, ...]:
    return tuple((point + s) % n for s in range(batch_size))


def _run_trial(
    spec: ModelSpec,
    theta: Vector,
    mechanism: MechanismConfig,
    dataset: ClientDataset,
    attack_cfg: AttackConfig,
    omega: float,
    point: int,
    trial: int,
    batch: Tuple[int, ...],
    rng: RngStream,
) -> TrialRecord:
    samples = [dataset.samples[i] for i in batch]
    X = np.stack([s.x for s in samples])
    labels = [s.y for s in samples]
    w_original = param_grad_arrays(spec, theta, X, labels)
    w_protected = protection.apply(mechanism, w_original, rng.derive(0))
    target = ClientDataset(client_id=dataset.client_id, samples=samples)
    try:
        trace = run_dlg(spec, theta, w_protected, target, attack_cfg, rng.derive(1))
    except DivergedError as e:
        logger.warning(f"MBP trial d={point} j={trial} diverged, counted as failure: {e}")
        return TrialRecord(point, trial, batch, None, 0)
    errors = per_sample_errors(_MSE, np.stack(trace.final_reconstruction), X)
    return TrialRecord(point, trial, batch, tuple(float(e) for e in errors), int(np.sum(errors < omega)))


def estimate_conditional(
    spec: ModelSpec,
    theta_star: npt.ArrayLike,
    mechanism: MechanismConfig,
    dataset: ClientDataset,
    attack_cfg: AttackConfig,
    mbp_cfg: MbpConfig,
    rng: RngStream,
    workers: int = 1,
) -> ConditionalEstimate:
    """
    kappa_hat(d) = recoveries of d / (T_sim * S), every trial attacking a fresh release.

    Trial (d, j) draws from rng.derive(d, j), so counts do not depend on the
    worker count or on scheduling order.
    """
    if mbp_cfg.omega < 0:
        raise InvalidInputError(f"omega must be >= 0, got {mbp_cfg.omega}")
    n = dataset.weight
    S = mbp_cfg.batch_size
    if S > n:
        raise InvalidInputError(f"batch_size {S} exceeds the {n} available data points")
    theta = np.asarray(theta_star, dtype=np.float64).reshape(-1)
    attack_cfg = matched_attack_config(attack_cfg, mechanism)

    jobs = [(d, j) for d in range(n) for j in range(mbp_cfg.t_sim)]

    def run(job: Tuple[int, int]) -> TrialRecord:
        d, j = job
        return _run_trial(
            spec, theta, mechanism, dataset, attack_cfg, mbp_cfg.omega,
            d, j, cyclic_batch(d, S, n), rng.derive(d, j),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            trials = list(executor.map(run, jobs))
    else:
        trials = [run(job) for job in jobs]

    counts = recount_successes(trials, mbp_cfg.omega, n)
    denominator = mbp_cfg.t_sim * S
    estimate = ConditionalEstimate(
        success_counts=tuple(counts),
        kappa_hat=tuple(c / denominator for c in counts),
        t_sim=mbp_cfg.t_sim,
        batch_size=S,
        trials=tuple(trials),
    )
    if estimate.diverged_trials:
        logger.warning(f"{estimate.diverged_trials}/{len(trials)} MBP trials diverged")
    logger.info(f"Conditional estimate over {n} points x {mbp_cfg.t_sim} trials: counts={counts}")
    return estimate


def recount_successes(trials: Sequence[TrialRecord], omega: float, n: int) -> List[int]:
    """
    Success counts per data point from stored slot errors.

    A recovered slot is credited to the point it holds, so a trial aimed at d
    never counts another point's recovery for d. With cyclic batches every
    point fills T_sim * S slots in total.
    """
    counts = [0] * n
    for record in trials:
        if record.slot_errors is None:
            continue
        for point, error in zip(record.batch, record.slot_errors):
            if error < omega:
                counts[point] += 1
    return counts


def smooth_kappa(kappa_hat: Sequence[float], denominator: int) -> Tuple[float, ...]:
    """Clamp to [1/(2N), 1 - 1/(2N)], half a count away from 0 and 1."""
    if denominator < 1:
        raise InvalidInputError(f"count denominator must be >= 1, got {denominator}")
    half = 1.0 / (2.0 * denominator)
    return tuple(min(max(float(k), half), 1.0 - half) for k in kappa_hat)


def estimate_mbp(
    kappa_hat: Sequence[float],
    prior: Optional[Sequence[float]] = None,
    smoothing: Optional[int] = None,
) -> float:
    """
    epsilon_hat = max_d |log(kappa(d) / f_D(d))|.

    smoothing is the count denominator T_sim * S; when given, kappa is clamped
    half a count away from 0 and 1 first. Without it a zero entry is an error.
    """
    kappa = [float(k) for k in kappa_hat]
    if not kappa:
        raise InvalidInputError("kappa_hat must be non-empty")
    if any(not 0.0 <= k <= 1.0 for k in kappa):
        raise InvalidInputError("kappa_hat entries must lie in [0, 1]")
    prior = _check_prior(prior, len(kappa)) if prior is not None else uniform_prior(len(kappa))
    if smoothing is not None:
        kappa = list(smooth_kappa(kappa, smoothing))
    elif any(k == 0.0 for k in kappa):
        raise InvalidInputError("kappa_hat has zero entries; pass smoothing to clamp them")
    return max(abs(math.log(k / p)) for k, p in zip(kappa, prior))


def estimation_half_width(delta: float, t_sim: int, c_const: float = 1.0) -> float:
    """zeta = c * sqrt(ln(2/delta) / T_sim)."""
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if t_sim < 1:
        raise InvalidInputError(f"t_sim must be >= 1, got {t_sim}")
    if not c_const > 0:
        raise InvalidInputError(f"c_const must be > 0, got {c_const}")
    return c_const * math.sqrt(math.log(2.0 / delta) / t_sim)


def reliability_probability(beta: float, t_sim: int, kappa1: float) -> float:
    """Probability that kappa_hat is within a factor (1 +- beta) of kappa1."""
    if not beta > 0:
        raise InvalidInputError(f"beta must be > 0, got {beta}")
    if t_sim < 1:
        raise InvalidInputError(f"t_sim must be >= 1, got {t_sim}")
    if not 0 < kappa1 <= 1:
        raise InvalidInputError(f"kappa1 must lie in (0, 1], got {kappa1}")
    return max(0.0, 1.0 - 2.0 * math.exp(-beta * beta * t_sim * kappa1 / 3.0))


def precision_for_confidence(delta: float, t_sim: int, kappa1: float) -> float:
    """Relative precision beta at which the reliability probability equals 1 - delta."""
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if t_sim < 1:
        raise InvalidInputError(f"t_sim must be >= 1, got {t_sim}")
    if not 0 < kappa1 <= 1:
        raise InvalidInputError(f"kappa1 must lie in (0, 1], got {kappa1}")
    return math.sqrt(3.0 * math.log(2.0 / delta) / (t_sim * kappa1))


def kappa_error_bound(delta: float, t_sim: int, kappa1: float) -> float:
    """Absolute deviation |kappa_hat - kappa1| holding with probability 1 - delta."""
    return precision_for_confidence(delta, t_sim, kappa1) * kappa1


def refined_half_width(delta: float, t_sim: int, kappa_min: float, c_const: float = 1.0) -> float:
    """c * sqrt(ln(2/delta) / (T_sim * min_d kappa1(d)))."""
    if not 0 < kappa_min <= 1:
        raise InvalidInputError(f"kappa_min must lie in (0, 1], got {kappa_min}")
    return estimation_half_width(delta, t_sim, c_const) / math.sqrt(kappa_min)


def estimate_mbp_level(
    spec: ModelSpec,
    theta_star: npt.ArrayLike,
    mechanism: MechanismConfig,
    dataset: ClientDataset,
    attack_cfg: AttackConfig,
    mbp_cfg: MbpConfig,
    rng: RngStream,
    workers: int = 1,
) -> MbpEstimate:
    """Full pipeline at one parameter snapshot: counts, smoothed kappa, epsilon_hat and zeta."""
    prior = _check_prior(mbp_cfg.prior, dataset.weight) if mbp_cfg.prior else uniform_prior(dataset.weight)
    conditional = estimate_conditional(spec, theta_star, mechanism, dataset, attack_cfg, mbp_cfg, rng, workers)
    smoothed = smooth_kappa(conditional.kappa_hat, conditional.denominator)
    epsilon_hat = estimate_mbp(conditional.kappa_hat, prior, conditional.denominator)
    zeta = estimation_half_width(mbp_cfg.delta, mbp_cfg.t_sim, mbp_cfg.c_const)
    # guarantees at the least-likely point, the weakest in the table
    kappa_min = min(smoothed)
    logger.info(f"MBP estimate: epsilon_hat={epsilon_hat:.6g}, zeta={zeta:.6g}")
    return MbpEstimate(
        kappa_hat=conditional.kappa_hat,
        kappa_smoothed=smoothed,
        epsilon_hat=epsilon_hat,
        zeta=zeta,
        success_counts=conditional.success_counts,
        trials_total=len(conditional.trials),
        prior=prior,
        delta=mbp_cfg.delta,
        t_sim=mbp_cfg.t_sim,
        omega=mbp_cfg.omega,
        batch_size=mbp_cfg.batch_size,
        c_const=mbp_cfg.c_const,
        theta_round=mbp_cfg.theta_round,
        diverged_trials=conditional.diverged_trials,
        beta=mbp_cfg.beta,
        reliability=reliability_probability(mbp_cfg.beta, mbp_cfg.t_sim, kappa_min),
        precision=precision_for_confidence(mbp_cfg.delta, mbp_cfg.t_sim, kappa_min),
        kappa_error=kappa_error_bound(mbp_cfg.delta, mbp_cfg.t_sim, kappa_min),
        refined_zeta=refined_half_width(mbp_cfg.delta, mbp_cfg.t_sim, kappa_min, mbp_cfg.c_const),
    )


def estimate_mbp_over_rounds(
    spec: ModelSpec,
    thetas: Sequence[npt.ArrayLike],
    mechanism: MechanismConfig,
    dataset: ClientDataset,
    attack_cfg: AttackConfig,
    mbp_cfg: MbpConfig,
    rng: RngStream,
    workers: int = 1,
) -> MbpEstimate:
    """
    Worst case over released parameters: the estimate at the snapshot with the
    largest epsilon_hat, carrying every snapshot's epsilon_hat along.
    """
    if not thetas:
        raise InvalidInputError("need at least one parameter snapshot")
    estimates = [
        estimate_mbp_level(spec, theta, mechanism, dataset, attack_cfg, mbp_cfg, rng.derive(r), workers)
        for r, theta in enumerate(thetas)
    ]
    per_round = tuple(e.epsilon_hat for e in estimates)
    worst = int(np.argmax(per_round))
    chosen = estimates[worst]
    logger.info(f"MBP over {len(thetas)} rounds: max epsilon_hat={chosen.epsilon_hat:.6g} at round {worst}")
    return replace(chosen, theta_round=worst, per_round_epsilon=per_round)
