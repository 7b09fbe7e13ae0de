"""
Synthetic client datasets on [0,1]^d.
"""
import logging
from typing import List

import numpy as np

from app.config.experiment import DataGenerator
from app.core.errors import InvalidInputError
from app.core.models import LabeledSample, ModelSpec
from app.core.numerics import RngStream
from app.services.federated import ClientDataset

logger = logging.getLogger(__name__)

BLOB_STD = 0.1


def class_centers(spec: ModelSpec) -> np.ndarray:
    """Blob centers spread evenly along the diagonal of the unit box."""
    c = spec.num_classes
    levels = np.linspace(0.25, 0.75, c)
    return np.repeat(levels[:, None], spec.input_dim, axis=1)


def generate_samples(spec: ModelSpec, n: int, generator: DataGenerator, rng: RngStream) -> List[LabeledSample]:
    if n < 1:
        raise InvalidInputError(f"sample count must be >= 1, got {n}")
    generator = DataGenerator(generator)
    if generator is DataGenerator.UNIFORM_BOX:
        X = rng.uniform(0.0, 1.0, (n, spec.input_dim))
        Y = rng.integers(0, spec.num_classes, n)
    else:
        Y = np.arange(n) % spec.num_classes
        centers = class_centers(spec)[Y]
        X = np.clip(centers + BLOB_STD * rng.standard_normal((n, spec.input_dim)), 0.0, 1.0)
    return [LabeledSample(x=X[i], y=int(Y[i])) for i in range(n)]


def generate_clients(
    spec: ModelSpec,
    count: int,
    samples_per_client: int,
    generator: DataGenerator,
    rng: RngStream,
) -> List[ClientDataset]:
    """One independent stream per client so adding clients never reshuffles earlier ones."""
    clients = [
        ClientDataset(client_id=k, samples=generate_samples(spec, samples_per_client, generator, rng.derive(k)))
        for k in range(count)
    ]
    logger.debug(f"Generated {count} clients x {samples_per_client} samples ({generator.value})")
    return clients
