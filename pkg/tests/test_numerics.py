"""
Tests del sustrato numérico: streams reproducibles, normas, esfera y diferencias finitas.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.errors import InvalidDimensionError, InvalidInputError, NumericDomainError
from app.core.numerics import (
    RngStream,
    as_vector,
    finite_diff_grad,
    l2_norm,
    normalize,
    relative_error,
    running_mean,
    sample_unit_sphere,
    sample_unit_sphere_many,
)


def test_same_key_same_draws():
    a = RngStream(42, 3).derive(1, 2).standard_normal(5)
    b = RngStream(42, 3).derive(1, 2).standard_normal(5)
    assert np.array_equal(a, b)


def test_derived_streams_differ():
    base = RngStream(42)
    assert not np.array_equal(base.derive(0).standard_normal(5), base.derive(1).standard_normal(5))


def test_child_does_not_depend_on_siblings():
    """Derivar hermanos no altera a un hijo."""
    base = RngStream(9)
    first = base.derive(5).uniform(size=3)
    for k in range(5):
        base.derive(k).uniform(size=100)
    assert np.array_equal(first, base.derive(5).uniform(size=3))


def test_rng_rejects_negative_seed():
    with pytest.raises(InvalidInputError):
        RngStream(-1)


def test_l2_norm_pythagorean():
    assert l2_norm([3.0, 4.0]) == 5.0


def test_l2_norm_rejects_nan():
    with pytest.raises(NumericDomainError):
        l2_norm([1.0, math.nan])


def test_normalize_zero_vector():
    with pytest.raises(InvalidInputError):
        normalize(np.zeros(3))


def test_as_vector_empty():
    with pytest.raises(InvalidDimensionError):
        as_vector([])


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=64), st.integers(min_value=0, max_value=2**32))
def test_sphere_samples_have_unit_norm(m, seed):
    v = sample_unit_sphere(m, RngStream(seed))
    assert v.shape == (m,)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12


def test_sphere_rejects_zero_dimension(rng):
    with pytest.raises(InvalidDimensionError):
        sample_unit_sphere(0, rng)


def test_sphere_mean_near_zero(rng):
    rows = sample_unit_sphere_many(8, 20000, rng)
    assert np.all(np.abs(rows.mean(axis=0)) < 0.02)


def test_finite_diff_on_quadratic():
    x = np.array([0.5, -1.0, 2.0])
    grad = finite_diff_grad(lambda v: float(v @ v), x)
    assert np.allclose(grad, 2 * x, atol=1e-8)


def test_finite_diff_rejects_bad_step():
    with pytest.raises(InvalidInputError):
        finite_diff_grad(lambda v: 0.0, [1.0], h=0.0)


def test_finite_diff_non_finite_value():
    with pytest.raises(NumericDomainError):
        finite_diff_grad(lambda v: math.inf, [1.0])


def test_relative_error_scale():
    assert relative_error([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.2 / 2.2)


def test_running_mean():
    assert np.allclose(running_mean([1.0, 3.0, 5.0]), [1.0, 2.0, 3.0])
