"""
Single-process FedSGD simulation with weighted aggregation.

Every round captures each client's original gradient W^O and the protected
upload W^D. The server only ever consumes W^D; W^O is kept for metrics.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from app.config.experiment import MechanismConfig
from app.core.errors import InvalidInputError
from app.core.models import LabeledSample, ModelSpec, loss_and_param_grad
from app.core.numerics import RngStream, Vector, ensure_finite
from app.services import protection

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClientDataset:
    client_id: int
    samples: Sequence[LabeledSample]

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise InvalidInputError(f"client {self.client_id} has no samples")
        dims = {s.x.size for s in samples}
        if len(dims) != 1:
            raise InvalidInputError(f"client {self.client_id} mixes input dimensions {sorted(dims)}")
        object.__setattr__(self, "samples", samples)

    @property
    def weight(self) -> int:
        """m_k, the local dataset size."""
        return len(self.samples)

    @property
    def input_dim(self) -> int:
        return self.samples[0].x.size

    @property
    def labels(self) -> List[int]:
        return [s.y for s in self.samples]

    def features(self) -> np.ndarray:
        return np.stack([s.x for s in self.samples])


@dataclass(frozen=True)
class ClientUpload:
    client_id: int
    w_original: Vector
    w_protected: Vector


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    per_client: Tuple[ClientUpload, ...]
    theta_before: Vector
    theta_after: Vector
    weights: Tuple[int, ...] = field(default=())

    def upload_for(self, client_id: int) -> ClientUpload:
        for upload in self.per_client:
            if upload.client_id == client_id:
                return upload
        raise InvalidInputError(f"client {client_id} did not participate in round {self.round_index}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "round_index": self.round_index,
            "theta_before": self.theta_before.tolist(),
            "theta_after": self.theta_after.tolist(),
            "per_client": [
                {
                    "client_id": u.client_id,
                    "weight": w,
                    "w_original": u.w_original.tolist(),
                    "w_protected": u.w_protected.tolist(),
                }
                for u, w in zip(self.per_client, self.weights)
            ],
        }


def _check_clients(spec: ModelSpec, clients: Sequence[ClientDataset]) -> None:
    if not clients:
        raise InvalidInputError("run_round needs at least one client")
    for client in clients:
        if client.input_dim != spec.input_dim:
            raise InvalidInputError(
                f"client {client.client_id} has input_dim {client.input_dim}, model expects {spec.input_dim}"
            )
        if any(y >= spec.num_classes for y in client.labels):
            raise InvalidInputError(f"client {client.client_id} has labels outside [0, {spec.num_classes})")


def aggregate(uploads: Sequence[Vector], weights: Sequence[int]) -> Vector:
    """Weighted mean sum_k (m_k / m) W_k, reduced in the given order."""
    total = float(sum(weights))
    acc = np.zeros_like(np.asarray(uploads[0], dtype=np.float64))
    for upload, weight in zip(uploads, weights):
        acc = acc + (weight / total) * upload
    return acc


def run_round(
    spec: ModelSpec,
    theta: npt.ArrayLike,
    clients: Sequence[ClientDataset],
    mechanism: MechanismConfig,
    lr: float,
    rng: RngStream,
    round_index: int = 0,
    workers: int = 1,
) -> RoundRecord:
    """One FedSGD round: local gradients, protection, weighted server step."""
    if not lr > 0:
        raise InvalidInputError(f"learning rate must be > 0, got {lr}")
    _check_clients(spec, clients)
    theta_before = np.array(theta, dtype=np.float64).reshape(-1)
    ensure_finite(theta_before, name="theta")

    def client_step(indexed: Tuple[int, ClientDataset]) -> ClientUpload:
        position, client = indexed
        _, w_original = loss_and_param_grad(spec, theta_before, client.samples)
        w_protected = protection.apply(mechanism, w_original, rng.derive(position))
        return ClientUpload(client.client_id, w_original, w_protected)

    indexed = list(enumerate(clients))
    if workers > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            uploads = list(executor.map(client_step, indexed))
    else:
        uploads = [client_step(item) for item in indexed]

    weights = tuple(c.weight for c in clients)
    update = aggregate([u.w_protected for u in uploads], weights)
    theta_after = theta_before - lr * update
    logger.debug(f"Round {round_index}: |update|={np.linalg.norm(update):.6g} over {len(clients)} clients")
    return RoundRecord(
        round_index=round_index,
        per_client=tuple(uploads),
        theta_before=theta_before,
        theta_after=theta_after,
        weights=weights,
    )


def run_session(
    spec: ModelSpec,
    theta0: npt.ArrayLike,
    clients: Sequence[ClientDataset],
    mechanism: MechanismConfig,
    lr: float,
    rounds: int,
    rng: RngStream,
    workers: int = 1,
) -> List[RoundRecord]:
    """Sequential FedSGD rounds; round r draws its noise from rng.derive(r)."""
    if rounds < 1:
        raise InvalidInputError(f"rounds must be >= 1, got {rounds}")
    records: List[RoundRecord] = []
    theta = np.array(theta0, dtype=np.float64).reshape(-1)
    for r in range(rounds):
        record = run_round(spec, theta, clients, mechanism, lr, rng.derive(r), round_index=r, workers=workers)
        records.append(record)
        theta = record.theta_after
    logger.info(f"FedSGD session finished: {rounds} rounds, {len(clients)} clients, mechanism={mechanism.kind.value}")
    return records


def global_loss(spec: ModelSpec, theta: npt.ArrayLike, clients: Sequence[ClientDataset]) -> float:
    """Federation objective: sum_k (m_k/m) L_k(theta)."""
    _check_clients(spec, clients)
    total = float(sum(c.weight for c in clients))
    return float(sum((c.weight / total) * loss_and_param_grad(spec, theta, c.samples)[0] for c in clients))
