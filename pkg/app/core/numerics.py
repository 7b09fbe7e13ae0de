"""
Deterministic numeric substrate: vectors, seeded RNG streams, norms,
sphere sampling and finite differences.
"""
import logging
from typing import Callable, Iterable, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from app.core.errors import InvalidDimensionError, InvalidInputError, NumericDomainError

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]

DEFAULT_FD_STEP = 1e-5
_U64 = (1 << 64) - 1


def as_vector(values: Union[Sequence[float], npt.ArrayLike], *, name: str = "vector") -> Vector:
    """Copy values into a finite 1-D float64 array."""
    v = np.array(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise InvalidDimensionError(f"{name} must have dim >= 1")
    ensure_finite(v, name=name)
    return v


def ensure_finite(a: npt.NDArray, *, name: str = "value") -> None:
    if not np.all(np.isfinite(a)):
        raise NumericDomainError(f"{name} contains non-finite entries")


class RngStream:
    """
    Seeded random stream keyed by (seed, stream_id).

    The generator is built from SeedSequence(seed, spawn_key=(stream_id, *path)),
    so a stream's draws never depend on how many sibling streams exist.
    Child streams come from derive(); never share one instance across workers.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Tuple[int, ...] = ()):
        if not (0 <= int(seed) <= _U64) or not (0 <= int(stream_id) <= _U64):
            raise InvalidInputError("seed and stream_id must be 64-bit unsigned integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(p) for p in path)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def derive(self, *keys: int) -> "RngStream":
        """Independent child stream; the same keys always give the same child."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(keys))

    def key(self) -> Tuple[int, ...]:
        return (self.seed, self.stream_id, *self.path)

    def standard_normal(self, size: Union[int, Tuple[int, ...]]) -> npt.NDArray[np.float64]:
        return self.generator.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator.uniform(low, high, size)

    def laplace(self, scale: float, size: Union[int, Tuple[int, ...]]) -> npt.NDArray[np.float64]:
        return self.generator.laplace(0.0, scale, size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size)

    def seed_u64(self) -> int:
        """A 64-bit seed drawn from this stream, for handing to configs."""
        return int(self.generator.integers(0, _U64, dtype=np.uint64, endpoint=True))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def l2_norm(v: npt.ArrayLike) -> float:
    """Euclidean norm; raises NumericDomainError on NaN/Inf entries."""
    a = np.asarray(v, dtype=np.float64)
    ensure_finite(a, name="l2_norm input")
    return float(np.linalg.norm(a.reshape(-1)))


def normalize(v: Vector) -> Vector:
    norm = l2_norm(v)
    if norm == 0.0:
        raise InvalidInputError("cannot normalize the zero vector")
    return v / norm


def sample_unit_sphere(m: int, rng: RngStream) -> Vector:
    """Uniform draw on S^{m-1} via a normalized standard Gaussian."""
    return sample_unit_sphere_many(m, 1, rng)[0]


def sample_unit_sphere_many(m: int, n: int, rng: RngStream) -> Matrix:
    if m < 1:
        raise InvalidDimensionError(f"sphere dimension must be >= 1, got {m}")
    g = rng.standard_normal((n, m))
    norms = np.linalg.norm(g, axis=1)
    # zero draws have probability 0; redraw rather than divide by zero
    while np.any(norms == 0.0):
        bad = norms == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), m))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None]


def finite_diff_grad(
    f: Callable[[Vector], float],
    x: npt.ArrayLike,
    h: float = DEFAULT_FD_STEP,
) -> Vector:
    """Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h."""
    if not h > 0:
        raise InvalidInputError(f"finite-difference step must be > 0, got {h}")
    x0 = np.array(x, dtype=np.float64).reshape(-1)
    grad = np.empty_like(x0)
    shifted = x0.copy()
    for i in range(x0.size):
        shifted[i] = x0[i] + h
        f_plus = float(f(shifted))
        shifted[i] = x0[i] - h
        f_minus = float(f(shifted))
        shifted[i] = x0[i]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericDomainError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: npt.ArrayLike, b: npt.ArrayLike, floor: float = 1e-12) -> float:
    """max |a-b| / max(|a|, |b|, floor), the usual gradient-check measure."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def running_mean(values: Iterable[float]) -> Vector:
    v = np.asarray(list(values), dtype=np.float64)
    return np.cumsum(v) / np.arange(1, v.size + 1)
