"""
Closed-form protection and attack complexity bounds.

Every calculator is pure. A bound whose denominator is not positive (or whose
substituted distortion has a negative radicand) comes back as an infeasible
report rather than an exception.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from app.config.experiment import MechanismKind
from app.core.errors import InvalidInputError

logger = logging.getLogger(__name__)


class FormulaId(str, Enum):
    PROTECTION_LOWER = "thm54"
    PROTECTION_ORDER = "thm55_order"
    PROTECTION_INTERVAL = "thm56_interval"
    ATTACK_UPPER = "thm63_T_upper"
    ATTACK_UPPER_SUBSTITUTED = "thm63_T_upper_substituted"
    ATTACK_LOWER = "thm64_T_lower"
    ATTACK_LOWER_SUBSTITUTED = "thm64_T_lower_substituted"


@dataclass(frozen=True)
class BoundInputs:
    """
    Symbols shared by the bound calculators. Only the ones a formula reads
    need to be set; each calculator checks its own requirements.

    hoeffding_term replaces sqrt(ln(2/gamma) / (2|D|)) when given.
    """
    m: Optional[int] = None
    epsilon: Optional[float] = None
    epsilon_hat: Optional[float] = None
    zeta: Optional[float] = None
    tau: Optional[float] = None
    epsilon_p: Optional[float] = None
    dataset_size: Optional[int] = None
    gamma: float = 0.1
    c_a: Optional[float] = None
    c_b: Optional[float] = None
    c2: Optional[float] = None
    c_const: float = 1.0
    p: Optional[float] = None
    hoeffding_term: Optional[float] = None

    def __post_init__(self):
        if self.m is not None and self.m < 1:
            raise InvalidInputError(f"m must be >= 1, got {self.m}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInputError(f"epsilon must be > 0, got {self.epsilon}")
        if self.tau is not None and not self.tau > 0:
            raise InvalidInputError(f"tau must be > 0, got {self.tau}")
        if not 0 < self.gamma < 1:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.dataset_size is not None and self.dataset_size < 1:
            raise InvalidInputError(f"dataset_size must be >= 1, got {self.dataset_size}")
        if self.c_a is not None and not self.c_a > 0:
            raise InvalidInputError(f"c_a must be > 0, got {self.c_a}")
        if self.c_a is not None and self.c_b is not None and self.c_a > self.c_b:
            raise InvalidInputError(f"need c_a <= c_b, got c_a={self.c_a}, c_b={self.c_b}")
        if self.c2 is not None and not self.c2 > 0:
            raise InvalidInputError(f"c2 must be > 0, got {self.c2}")
        if not self.c_const > 0:
            raise InvalidInputError(f"c_const must be > 0, got {self.c_const}")
        if self.p is not None and not 0 < self.p < 1:
            raise InvalidInputError(f"p must lie in (0, 1), got {self.p}")
        if self.epsilon_p is not None and not self.epsilon_p <= 1:
            raise InvalidInputError(f"epsilon_p must be <= 1, got {self.epsilon_p}")
        if self.hoeffding_term is not None and not self.hoeffding_term >= 0:
            raise InvalidInputError(f"hoeffding_term must be >= 0, got {self.hoeffding_term}")

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise InvalidInputError(f"bound inputs missing: {', '.join(missing)}")

    def hoeffding(self) -> float:
        if self.hoeffding_term is not None:
            return self.hoeffding_term
        self.require("dataset_size")
        return math.sqrt(math.log(2.0 / self.gamma) / (2.0 * self.dataset_size))

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class BoundReport:
    formula_id: FormulaId
    value: Optional[float]
    feasible: bool
    denominator: float
    inputs: Dict[str, Any] = field(default_factory=dict)
    detail: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.feasible != (self.value is not None):
            raise InvalidInputError("a bound value is present exactly when the bound is feasible")

    def to_row(self) -> Dict[str, Any]:
        return {
            "formula_id": self.formula_id.value,
            "value": self.value if self.feasible else "infeasible",
            "feasible": self.feasible,
            "denominator": self.denominator,
            "inputs": self.inputs,
            "detail": self.detail,
        }


def _rate_denominator(epsilon: float) -> float:
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be > 0, got {epsilon}")
    return min(epsilon * epsilon, epsilon)


def protection_lower_bound(m: int, epsilon: float, c_const: float = 1.0) -> float:
    """c * max(m / min(eps, eps^2), 1)."""
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    return c_const * max(m / _rate_denominator(epsilon), 1.0)


def protection_order(m: int, epsilon: float) -> float:
    """m / min(eps^2, eps), the optimal rate with unit constant."""
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    return m / _rate_denominator(epsilon)


def protection_interval_estimated(m: int, epsilon_hat: float, zeta: float) -> BoundReport:
    """
    Rates at eps_hat + zeta (lower) and eps_hat - zeta (upper). The report's
    value is the upper rate; infeasible when eps_hat - zeta <= 0.
    """
    if not epsilon_hat > 0:
        raise InvalidInputError(f"epsilon_hat must be > 0, got {epsilon_hat}")
    if not zeta >= 0:
        raise InvalidInputError(f"zeta must be >= 0, got {zeta}")
    lower = protection_order(m, epsilon_hat + zeta)
    shrunk = epsilon_hat - zeta
    upper = protection_order(m, shrunk) if shrunk > 0 else None
    return BoundReport(
        formula_id=FormulaId.PROTECTION_INTERVAL,
        value=upper,
        feasible=upper is not None,
        denominator=shrunk,
        inputs={"m": m, "epsilon_hat": epsilon_hat, "zeta": zeta},
        detail={"lower_rate": lower, "upper_rate": upper},
    )


def substituted_distortion(m: int, epsilon: float, gamma: float, sign: int) -> Tuple[Optional[float], float]:
    """
    sqrt(m/min(eps^2, eps) +- sqrt(m ln(1/gamma) / 2)) and its radicand.
    The root is None when the radicand is negative.
    """
    spread = math.sqrt(m * math.log(1.0 / gamma) / 2.0)
    radicand = protection_order(m, epsilon) + sign * spread
    return (math.sqrt(radicand) if radicand >= 0 else None), radicand


def _distortion(inputs: BoundInputs, delta_k: Optional[float], substituted: bool, sign: int):
    if substituted:
        inputs.require("m", "epsilon")
        delta, radicand = substituted_distortion(inputs.m, inputs.epsilon, inputs.gamma, sign)
        return delta, {"substituted_delta": delta, "radicand": radicand}
    if delta_k is None or not delta_k >= 0:
        raise InvalidInputError(f"delta_k must be >= 0, got {delta_k}")
    return float(delta_k), {}


def attack_T_upper(inputs: BoundInputs, delta_k: Optional[float] = None, substituted: bool = False) -> BoundReport:
    """T <= (c2 c_b / (c_a Delta - tau [1 - eps_p + h]))^2 when the denominator is positive."""
    inputs.require("tau", "epsilon_p", "c_a", "c_b", "c2")
    formula = FormulaId.ATTACK_UPPER_SUBSTITUTED if substituted else FormulaId.ATTACK_UPPER
    delta, detail = _distortion(inputs, delta_k, substituted, sign=-1)
    h = inputs.hoeffding()
    detail["hoeffding_term"] = h
    if substituted:
        # the substituted distortion is a lower estimate inside an upper bound on T
        detail["note"] = "lower estimate of delta used in an upper bound"
    if delta is None:
        return BoundReport(formula, None, False, math.nan, inputs.to_dict(), detail)
    denominator = inputs.c_a * delta - inputs.tau * (1.0 - inputs.epsilon_p + h)
    feasible = denominator > 0
    value = (inputs.c2 * inputs.c_b / denominator) ** 2 if feasible else None
    return BoundReport(formula, value, feasible, denominator, {**inputs.to_dict(), "delta_k": delta}, detail)


def attack_T_lower(inputs: BoundInputs, delta_k: Optional[float] = None, substituted: bool = False) -> BoundReport:
    """
    T >= (c2 c_b / (4 [tau (1 - eps_p) + h] - c_a Delta))^(1 / (1 - p)).

    The detail records whether Delta >= (2 c2 c_b / c_a) T^(p-1) holds at the
    returned T; it is reported, not enforced.
    """
    inputs.require("tau", "epsilon_p", "c_a", "c_b", "c2", "p")
    formula = FormulaId.ATTACK_LOWER_SUBSTITUTED if substituted else FormulaId.ATTACK_LOWER
    delta, detail = _distortion(inputs, delta_k, substituted, sign=1)
    h = inputs.hoeffding()
    detail["hoeffding_term"] = h
    if delta is None:
        return BoundReport(formula, None, False, math.nan, inputs.to_dict(), detail)
    denominator = 4.0 * (inputs.tau * (1.0 - inputs.epsilon_p) + h) - inputs.c_a * delta
    feasible = denominator > 0
    value = None
    if feasible:
        value = (inputs.c2 * inputs.c_b / denominator) ** (1.0 / (1.0 - inputs.p))
        threshold = (2.0 * inputs.c2 * inputs.c_b / inputs.c_a) * value ** (inputs.p - 1.0)
        detail["applicability_threshold"] = threshold
        detail["applicable"] = delta >= threshold
    return BoundReport(formula, value, feasible, denominator, {**inputs.to_dict(), "delta_k": delta}, detail)


def protection_reports(m: int, epsilon: float, c_const: float = 1.0) -> List[BoundReport]:
    """The lower bound and the optimal rate as report rows."""
    denominator = _rate_denominator(epsilon)
    inputs = {"m": m, "epsilon": epsilon, "c_const": c_const}
    return [
        BoundReport(FormulaId.PROTECTION_LOWER, protection_lower_bound(m, epsilon, c_const), True, denominator, inputs),
        BoundReport(FormulaId.PROTECTION_ORDER, protection_order(m, epsilon), True, denominator, {"m": m, "epsilon": epsilon}),
    ]


def evaluate_all(inputs: BoundInputs, delta_k: float) -> List[BoundReport]:
    """One report per formula, in FormulaId order."""
    inputs.require("m", "epsilon", "epsilon_hat", "zeta")
    reports = protection_reports(inputs.m, inputs.epsilon, inputs.c_const)
    reports.append(protection_interval_estimated(inputs.m, inputs.epsilon_hat, inputs.zeta))
    for calculator in (attack_T_upper, attack_T_lower):
        reports.append(calculator(inputs, delta_k, substituted=False))
        reports.append(calculator(inputs, delta_k, substituted=True))
    reports.sort(key=lambda r: list(FormulaId).index(r.formula_id))
    infeasible = [r.formula_id.value for r in reports if not r.feasible]
    if infeasible:
        logger.info(f"Infeasible bounds: {', '.join(infeasible)}")
    return reports


@dataclass(frozen=True)
class SweepRow:
    mechanism: MechanismKind
    m: int
    epsilon: float
    protection_rate: float
    attack_T_lower: Optional[float]
    lower_feasible: bool
    denominator: float
    pruned: bool
    rank: Optional[int] = None

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row["mechanism"] = self.mechanism.value
        row["attack_T_lower"] = self.attack_T_lower if self.lower_feasible else "infeasible"
        row["rank"] = "" if self.rank is None else self.rank
        return row


def sweep_designs(
    epsilons: Sequence[float],
    dims: Sequence[int],
    mechanisms: Sequence[MechanismKind],
    t_budget: float,
    constants: BoundInputs,
    mechanism_constants: Optional[Mapping[str, float]] = None,
    workers: int = 1,
) -> List[SweepRow]:
    """
    Flat grid with pruning. Each point gets its protection rate and the
    substituted attack lower bound; a point is pruned when that bound is
    feasible and above t_budget. Unpruned points are ranked by protection rate
    (least distortion first); pruned points follow without a rank.
    """
    if not epsilons or not dims or not mechanisms:
        raise InvalidInputError("sweep grid must be non-empty in every axis")
    if not t_budget > 0:
        raise InvalidInputError(f"t_budget must be > 0, got {t_budget}")
    rate_constants = dict(mechanism_constants or {})
    grid = [(MechanismKind(k), int(m), float(e)) for k in mechanisms for m in dims for e in epsilons]

    def evaluate(point: Tuple[MechanismKind, int, float]) -> SweepRow:
        kind, m, eps = point
        rate = rate_constants.get(kind.value, 1.0) * protection_order(m, eps)
        report = attack_T_lower(
            BoundInputs(**{**asdict(constants), "m": m, "epsilon": eps}), substituted=True,
        )
        return SweepRow(
            mechanism=kind,
            m=m,
            epsilon=eps,
            protection_rate=rate,
            attack_T_lower=report.value,
            lower_feasible=report.feasible,
            denominator=report.denominator,
            pruned=report.feasible and report.value > t_budget,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(evaluate, grid))
    else:
        rows = [evaluate(point) for point in grid]

    # stable sort keeps grid order among ties
    survivors = sorted((r for r in rows if not r.pruned), key=lambda r: r.protection_rate)
    pruned = [r for r in rows if r.pruned]
    ranked = [
        replace(r, rank=i) for i, r in enumerate(survivors, start=1)
    ]
    logger.info(f"Sweep: {len(rows)} designs, {len(pruned)} pruned at T_budget={t_budget}")
    return ranked + pruned
