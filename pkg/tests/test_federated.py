"""
Tests de la simulación FedSGD: agregación ponderada, determinismo y descenso de la pérdida.
"""
import numpy as np
import pytest

from app.config.experiment import DataGenerator, MechanismConfig, MechanismKind
from app.core.errors import InvalidInputError
from app.core.models import LabeledSample, ModelKind, ModelSpec, init_params, loss_and_param_grad
from app.core.numerics import RngStream
from app.services.data import generate_clients, generate_samples
from app.services.federated import ClientDataset, aggregate, global_loss, run_round, run_session

SPEC = ModelSpec(ModelKind.LOGISTIC_REGRESSION, 2, 2)


def _clients(rng, count=3, per_client=4):
    return generate_clients(SPEC, count, per_client, DataGenerator.TWO_GAUSSIANS, rng)


def test_aggregate_weights():
    out = aggregate([np.array([1.0, 0.0]), np.array([0.0, 1.0])], [1, 3])
    assert np.allclose(out, [0.25, 0.75])


def test_identity_round_is_gradient_step(rng):
    clients = _clients(rng.derive(0))
    theta = init_params(SPEC, rng.derive(1))
    record = run_round(SPEC, theta, clients, MechanismConfig(), 0.1, rng.derive(2))
    pooled = [s for c in clients for s in c.samples]
    _, full_grad = loss_and_param_grad(SPEC, theta, pooled)
    # equal-size clients: weighted mean of local means is the pooled mean
    assert np.allclose(record.theta_after, theta - 0.1 * full_grad, atol=1e-12)
    for upload in record.per_client:
        assert np.array_equal(upload.w_original, upload.w_protected)


def test_round_records_both_gradients(rng):
    clients = _clients(rng.derive(0))
    mech = MechanismConfig(kind=MechanismKind.GAUSSIAN, noise_scale=0.2)
    record = run_round(SPEC, init_params(SPEC, rng.derive(1)), clients, mech, 0.1, rng.derive(2))
    upload = record.upload_for(1)
    assert not np.array_equal(upload.w_original, upload.w_protected)
    with pytest.raises(InvalidInputError):
        record.upload_for(99)


def test_worker_count_does_not_change_round(rng):
    clients = _clients(rng.derive(0), count=4)
    theta = init_params(SPEC, rng.derive(1))
    mech = MechanismConfig(kind=MechanismKind.LAPLACE, noise_scale=0.1)
    serial = run_round(SPEC, theta, clients, mech, 0.1, rng.derive(2), workers=1)
    threaded = run_round(SPEC, theta, clients, mech, 0.1, rng.derive(2), workers=3)
    assert np.array_equal(serial.theta_after, threaded.theta_after)


def test_session_decreases_loss(rng):
    clients = _clients(rng.derive(0), count=4, per_client=8)
    theta0 = init_params(SPEC, rng.derive(1))
    records = run_session(SPEC, theta0, clients, MechanismConfig(), 0.5, 20, rng.derive(2))
    assert len(records) == 20
    assert global_loss(SPEC, records[-1].theta_after, clients) < global_loss(SPEC, theta0, clients)
    for before, after in zip(records, records[1:]):
        assert np.array_equal(before.theta_after, after.theta_before)


def test_round_rejects_bad_inputs(rng):
    theta = init_params(SPEC, rng)
    with pytest.raises(InvalidInputError):
        run_round(SPEC, theta, [], MechanismConfig(), 0.1, rng)
    wide = ClientDataset(0, [LabeledSample(x=np.array([0.1, 0.2, 0.3]), y=0)])
    with pytest.raises(InvalidInputError):
        run_round(SPEC, theta, [wide], MechanismConfig(), 0.1, rng)
    with pytest.raises(InvalidInputError):
        run_round(SPEC, theta, _clients(rng.derive(0)), MechanismConfig(), 0.0, rng)


def test_round_record_serializes(rng):
    record = run_round(SPEC, init_params(SPEC, rng), _clients(rng.derive(0)), MechanismConfig(), 0.1, rng.derive(1))
    row = record.to_dict()
    assert row["round_index"] == 0
    assert [c["weight"] for c in row["per_client"]] == [4, 4, 4]


def test_clients_reproducible():
    a = _clients(RngStream(3))
    b = _clients(RngStream(3))
    assert all(np.array_equal(x.features(), y.features()) for x, y in zip(a, b))


def test_generators_stay_in_box(rng):
    for generator in DataGenerator:
        samples = generate_samples(SPEC, 20, generator, rng.derive(0))
        X = np.stack([s.x for s in samples])
        assert X.shape == (20, 2)
        assert np.all((X >= 0.0) & (X <= 1.0))
    blobs = generate_samples(SPEC, 6, DataGenerator.TWO_GAUSSIANS, rng)
    assert [s.y for s in blobs] == [0, 1, 0, 1, 0, 1]
    with pytest.raises(InvalidInputError):
        generate_samples(SPEC, 0, DataGenerator.UNIFORM_BOX, rng)
