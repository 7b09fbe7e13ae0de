"""
Tests del atacante DLG: trazas, convergencia, métricas y divergencia.
"""
import math

import numpy as np
import pytest

from app.config.experiment import AttackConfig, AttackInit, MechanismConfig, MechanismKind, MetricKind
from app.core.errors import DivergedError, InvalidDimensionError, InvalidInputError
from app.core.models import LabeledSample, init_params, loss_and_param_grad
from app.services import attack
from app.services.federated import ClientDataset


@pytest.fixture
def target():
    return ClientDataset(0, [
        LabeledSample(x=np.array([0.2, 0.7, 0.4]), y=1),
        LabeledSample(x=np.array([0.9, 0.1, 0.5]), y=2),
    ])


def _observed(spec, theta, target):
    return loss_and_param_grad(spec, theta, target.samples)[1]


def test_warm_start_at_truth_stays_put(lr_spec, rng, target):
    theta = init_params(lr_spec, rng)
    config = AttackConfig(max_iters=5, init=AttackInit.WARM_START)
    trace = attack.run_dlg(lr_spec, theta, _observed(lr_spec, theta, target), target, config,
                           rng.derive(1), warm_start=target.features())
    assert trace.per_iter_errors.shape == (5, 2)
    assert np.all(trace.per_iter_errors == 0.0)
    assert trace.converged_iter == 1
    assert np.allclose(np.stack(trace.final_reconstruction), target.features())


def test_trace_shapes(lr_spec, rng, target):
    theta = init_params(lr_spec, rng)
    config = AttackConfig(max_iters=12, step_size=0.5)
    trace = attack.run_dlg(lr_spec, theta, _observed(lr_spec, theta, target), target, config, rng.derive(1))
    assert trace.iterations == 12
    assert trace.samples == 2
    assert trace.per_iter_objective.shape == (12,)
    assert trace.per_iter_grad_mismatch.shape == (12,)
    assert trace.per_iter_grad_mismatch[-1] == 0.0
    assert trace.labels == (1, 2)
    assert trace.iterates is None
    assert np.all(np.stack(trace.final_reconstruction) >= 0.0)


def test_record_iterates(lr_spec, rng, target):
    theta = init_params(lr_spec, rng)
    config = AttackConfig(max_iters=4, record_iterates=True)
    trace = attack.run_dlg(lr_spec, theta, _observed(lr_spec, theta, target), target, config, rng.derive(1))
    assert trace.iterates.shape == (4, 2, 3)
    assert np.array_equal(trace.iterates[-1], np.stack(trace.final_reconstruction))


def test_attack_is_reproducible(lr_spec, rng, target):
    theta = init_params(lr_spec, rng)
    config = AttackConfig(max_iters=10)
    observed = _observed(lr_spec, theta, target)
    a = attack.run_dlg(lr_spec, theta, observed, target, config, rng.derive(7))
    b = attack.run_dlg(lr_spec, theta, observed, target, config, rng.derive(7))
    assert np.array_equal(a.per_iter_errors, b.per_iter_errors)


def test_non_finite_observed_gradient_diverges(lr_spec, rng, target):
    theta = init_params(lr_spec, rng)
    observed = np.full(lr_spec.param_dim, math.inf)
    config = AttackConfig(max_iters=10, clamp_box=False)
    with pytest.raises(DivergedError) as info:
        attack.run_dlg(lr_spec, theta, observed, target, config, rng.derive(1))
    assert info.value.partial_trace.iterations == 0


def test_observed_gradient_size_checked(lr_spec, rng, target):
    with pytest.raises(InvalidDimensionError):
        attack.run_dlg(lr_spec, init_params(lr_spec, rng), np.zeros(3), target, AttackConfig(max_iters=1))


def test_warm_start_required(lr_spec, rng, target):
    theta = init_params(lr_spec, rng)
    with pytest.raises(InvalidInputError):
        attack.run_dlg(lr_spec, theta, _observed(lr_spec, theta, target), target,
                       AttackConfig(max_iters=1, init=AttackInit.WARM_START))


def test_to_dict_stride(lr_spec, rng, target):
    theta = init_params(lr_spec, rng)
    trace = attack.run_dlg(lr_spec, theta, _observed(lr_spec, theta, target), target,
                           AttackConfig(max_iters=5), rng.derive(1))
    row = trace.to_dict(stride=2)
    assert row["iterations"] == [1, 3, 5]
    assert len(row["per_iter_errors"]) == 3
    assert row["metric"] == "mse"
    with pytest.raises(InvalidInputError):
        trace.to_dict(stride=0)


def test_psnr_metric():
    metric = attack.ErrorMetric(MetricKind.PSNR, 1.0)
    assert attack.error(metric, [0.1, 0.1], [0.0, 0.0]) == pytest.approx(20.0)
    assert attack.error(metric, [0.5], [0.5]) == attack.PSNR_CAP
    assert metric.higher_is_better


def test_error_shape_mismatch():
    with pytest.raises(InvalidDimensionError):
        attack.error(attack.ErrorMetric(), [0.1, 0.2], [0.1])


def test_first_converged():
    assert attack.first_converged([0.3, 0.1, 0.04, 0.2], 0.05) == 3
    assert attack.first_converged([0.3, 0.1], 0.05) is None
    assert attack.first_converged([10.0, 25.0, 31.0], 30.0, higher_is_better=True) == 3


def test_matched_config_follows_sphere_projection():
    config = AttackConfig()
    sphere = MechanismConfig(kind=MechanismKind.SPHERE_CAP, noise_scale=1.0)
    assert attack.matched_attack_config(config, sphere).normalize_gradients is True
    gaussian = MechanismConfig(kind=MechanismKind.GAUSSIAN, noise_scale=0.1)
    assert attack.matched_attack_config(config, gaussian) is config
