"""
Gradient-distortion mechanisms W^O -> W^D and privacy-level bookkeeping.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
import numpy.typing as npt
from scipy import stats

from app.config.experiment import MechanismConfig, MechanismKind
from app.core.errors import DegenerateInputError, InvalidInputError
from app.core.numerics import Matrix, RngStream, Vector, ensure_finite

logger = logging.getLogger(__name__)

MAX_CAP_THRESHOLD = 0.99


@dataclass(frozen=True)
class GradientPair:
    """Original and released gradient, in the frame the distortion is measured in."""
    original: Vector
    protected: Vector


class PrivacySource(str, Enum):
    NOMINAL = "nominal"
    CONVERTED = "converted"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class PrivacyLevel:
    ldp_epsilon: Optional[float]
    mbp_epsilon: Optional[float]
    source: PrivacySource

    def __post_init__(self):
        if self.ldp_epsilon is None and self.mbp_epsilon is None:
            raise InvalidInputError("a privacy level needs an LDP or an MBP epsilon")
        for value in (self.ldp_epsilon, self.mbp_epsilon):
            if value is not None and not value >= 0:
                raise InvalidInputError(f"privacy epsilons must be >= 0, got {value}")

    def to_dict(self) -> Dict[str, Any]:
        return {"ldp_epsilon": self.ldp_epsilon, "mbp_epsilon": self.mbp_epsilon, "source": self.source.value}


def ldp_to_mbp(xi: float) -> float:
    """xi-LDP implies xi-MBP."""
    if not xi >= 0:
        raise InvalidInputError(f"privacy level must be >= 0, got {xi}")
    return float(xi)


def mbp_to_ldp(xi: float) -> float:
    """xi-MBP implies 2*xi-LDP."""
    if not xi >= 0:
        raise InvalidInputError(f"privacy level must be >= 0, got {xi}")
    return 2.0 * float(xi)


def privacy_level_from_mbp(xi: float, source: PrivacySource = PrivacySource.CONVERTED) -> PrivacyLevel:
    return PrivacyLevel(ldp_epsilon=mbp_to_ldp(xi), mbp_epsilon=float(xi), source=source)


def nominal_privacy(mechanism: MechanismConfig) -> Optional[PrivacyLevel]:
    """The declared level, if any. Metadata only; not a derived guarantee."""
    if mechanism.nominal_mbp_epsilon is None:
        return None
    return privacy_level_from_mbp(mechanism.nominal_mbp_epsilon, source=PrivacySource.NOMINAL)


def sphere_cap_parameters(m: int, eta: float) -> Tuple[float, float]:
    """
    Cap probability p and cap threshold gamma for cap parameter eta.

    p grows with min(eta, 1); gamma grows like eta/sqrt(m) below 1 and
    sqrt(eta/m) above.
    """
    if m < 1:
        raise InvalidInputError(f"dimension must be >= 1, got {m}")
    if not eta >= 0:
        raise InvalidInputError(f"cap parameter must be >= 0, got {eta}")
    half = min(eta, 1.0) / 2.0
    p = 1.0 / (1.0 + math.exp(-half))
    gamma = min(2.0 * min(eta, math.sqrt(eta)) / math.sqrt(m), MAX_CAP_THRESHOLD)
    return p, gamma


def sphere_cap_alignment(m: int, eta: float) -> float:
    """E<V, u> for the sphere_cap release V of a unit input u."""
    p, gamma = sphere_cap_parameters(m, eta)
    if m == 1:
        return 2.0 * p - 1.0
    a = (m - 1) / 2.0
    b_gamma = (1.0 + gamma) / 2.0
    # E[B 1{B in I}] = a/(2a) * P_{Beta(a+1,a)}(I) for B ~ Beta(a, a)
    mean_cap = 0.5 * stats.beta.sf(b_gamma, a + 1, a) / stats.beta.sf(b_gamma, a, a)
    mean_rest = 0.5 * stats.beta.cdf(b_gamma, a + 1, a) / stats.beta.cdf(b_gamma, a, a)
    return float(p * (2.0 * mean_cap - 1.0) + (1.0 - p) * (2.0 * mean_rest - 1.0))


def release_scale(mechanism: MechanismConfig, m: int) -> float:
    """Factor that makes the release unbiased for the (projected) input."""
    if mechanism.kind is MechanismKind.SPHERE_CAP:
        alignment = sphere_cap_alignment(m, mechanism.noise_scale)
        if mechanism.noise_scale == 0.0 or alignment <= 0.0:
            raise DegenerateInputError("sphere_cap with eta = 0 carries no signal to debias")
        return 1.0 / alignment
    return 1.0


def _unit_rows(rows: Matrix, what: str) -> Matrix:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"{what} landed on the zero vector")
    return rows / norms[:, None]


def _project(w: Vector) -> Vector:
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise DegenerateInputError("cannot project a zero gradient to the unit sphere")
    return w / norm


def _sphere_cap_rows(u: Vector, n: int, eta: float, rng: RngStream) -> Matrix:
    m = u.size
    p, gamma = sphere_cap_parameters(m, eta)
    in_cap = rng.uniform(0.0, 1.0, n) < p
    if m == 1:
        return np.where(in_cap, 1.0, -1.0)[:, None] * u[None, :]

    a = (m - 1) / 2.0
    b_gamma = (1.0 + gamma) / 2.0
    q = 1.0 - rng.uniform(0.0, 1.0, n)  # (0, 1]
    upper = stats.beta.isf(q * stats.beta.sf(b_gamma, a, a), a, a)
    lower = stats.beta.ppf(q * stats.beta.cdf(b_gamma, a, a), a, a)
    t = 2.0 * np.where(in_cap, upper, lower) - 1.0
    t = np.clip(t, -1.0, 1.0)

    z = rng.standard_normal((n, m))
    perp = z - (z @ u)[:, None] * u[None, :]
    norms = np.linalg.norm(perp, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        fresh = rng.standard_normal((int(bad.sum()), m))
        perp[bad] = fresh - (fresh @ u)[:, None] * u[None, :]
        norms = np.linalg.norm(perp, axis=1)
    perp /= norms[:, None]
    rows = t[:, None] * u[None, :] + np.sqrt(1.0 - t * t)[:, None] * perp
    return _unit_rows(rows, "sphere_cap release")


def apply_many(mechanism: MechanismConfig, w_original: npt.ArrayLike, n: int, rng: RngStream) -> Matrix:
    """n independent releases of the same gradient, one per row."""
    if n < 1:
        raise InvalidInputError(f"number of releases must be >= 1, got {n}")
    w = np.asarray(w_original, dtype=np.float64).reshape(-1)
    ensure_finite(w, name="w_original")
    base = _project(w) if mechanism.normalize_to_sphere else w
    m = base.size
    kind = mechanism.kind

    if kind is MechanismKind.IDENTITY:
        return np.tile(base, (n, 1))
    if kind is MechanismKind.SPHERE_CAP:
        return _sphere_cap_rows(base, n, mechanism.noise_scale, rng)
    if kind is MechanismKind.GAUSSIAN:
        rows = base[None, :] + mechanism.noise_scale * rng.standard_normal((n, m))
    elif kind is MechanismKind.LAPLACE:
        rows = base[None, :] + rng.laplace(mechanism.noise_scale, (n, m))
    else:
        raise InvalidInputError(f"unknown mechanism kind {kind}")
    if mechanism.normalize_to_sphere:
        rows = _unit_rows(rows, f"{kind.value} release")
    return rows


def apply(mechanism: MechanismConfig, w_original: npt.ArrayLike, rng: RngStream) -> Vector:
    """Release W^D for one upload."""
    if mechanism.kind is MechanismKind.IDENTITY and not mechanism.normalize_to_sphere:
        w = np.asarray(w_original, dtype=np.float64).reshape(-1)
        ensure_finite(w, name="w_original")
        return w.copy()
    return apply_many(mechanism, w_original, 1, rng)[0]


def comparable_original(mechanism: MechanismConfig, w_original: npt.ArrayLike) -> Vector:
    w = np.asarray(w_original, dtype=np.float64).reshape(-1)
    return _project(w) if mechanism.normalize_to_sphere else w.copy()


def gradient_pair(mechanism: MechanismConfig, w_original: npt.ArrayLike, w_protected: npt.ArrayLike) -> GradientPair:
    """Pair an upload with its release, the original moved into the release frame."""
    protected = np.asarray(w_protected, dtype=np.float64).reshape(-1)
    original = comparable_original(mechanism, w_original)
    if original.shape != protected.shape:
        raise InvalidInputError(f"release has shape {protected.shape}, original {original.shape}")
    return GradientPair(original=original, protected=protected)
