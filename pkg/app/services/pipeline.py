"""
Replicate pipeline shared by the commands: federation setup, FedSGD session,
attack on the target client's protected upload, and the per-replicate
distortion measurements.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, TypeVar

from app.config.experiment import ExperimentConfig
from app.core.models import ModelSpec, init_params
from app.core.numerics import RngStream, Vector
from app.services import protection
from app.services.attack import AttackTrace, matched_attack_config, run_dlg
from app.services.complexity import gradient_distortion, protection_complexity_mc
from app.services.data import generate_clients
from app.services.federated import ClientDataset, RoundRecord, run_session

logger = logging.getLogger(__name__)

# stream ids under the master seed
STREAM_REPLICATES = 1
STREAM_CONSTANTS = 2
STREAM_MBP = 3
STREAM_VALIDATE = 4

R = TypeVar("R")


@dataclass(frozen=True)
class Federation:
    spec: ModelSpec
    clients: List[ClientDataset]
    records: List[RoundRecord]


@dataclass(frozen=True)
class ReplicateOutcome:
    replicate: int
    stream: Tuple[int, ...]
    trace: AttackTrace
    theta_attacked: Vector
    distortion: float
    protection_c: float
    records: Tuple[RoundRecord, ...]


def replicate_stream(config: ExperimentConfig, replicate: int) -> RngStream:
    return RngStream(config.seed, STREAM_REPLICATES).derive(replicate)


def build_federation(config: ExperimentConfig, rng: RngStream, workers: int = 1) -> Federation:
    """Clients from rng.derive(0), theta_0 from rng.derive(1), session noise from rng.derive(2)."""
    spec = config.model.to_spec()
    clients = generate_clients(
        spec, config.clients.count, config.clients.samples_per_client, config.clients.generator, rng.derive(0),
    )
    theta0 = init_params(spec, rng.derive(1), config.model.theta_scale)
    records = run_session(
        spec, theta0, clients, config.mechanism, config.federated.lr, config.federated.rounds,
        rng.derive(2), workers=workers,
    )
    return Federation(spec, clients, records)


def run_replicate(config: ExperimentConfig, replicate: int) -> ReplicateOutcome:
    """
    One replicate end to end. Top-level so it can cross process boundaries;
    everything it draws comes from the replicate's own stream.
    """
    rng = replicate_stream(config, replicate)
    federation = build_federation(config, rng)
    record = federation.records[config.federated.attack_round]
    upload = record.upload_for(config.clients.target_client)
    target = federation.clients[config.clients.target_client]

    attack_cfg = matched_attack_config(config.attack, config.mechanism)
    trace = run_dlg(federation.spec, record.theta_before, upload.w_protected, target, attack_cfg, rng.derive(3))

    pair = protection.gradient_pair(config.mechanism, upload.w_original, upload.w_protected)
    distortion = gradient_distortion(pair.original, pair.protected)
    cost = protection_complexity_mc(config.mechanism, upload.w_original, config.complexity.trials, rng.derive(4))
    logger.info(
        f"Replicate {replicate}: final mean error={trace.mean_errors()[-1]:.6g}, "
        f"delta={distortion:.6g}, C={cost:.6g}"
    )
    return ReplicateOutcome(
        replicate=replicate,
        stream=rng.key(),
        trace=trace,
        theta_attacked=record.theta_before,
        distortion=distortion,
        protection_c=cost,
        records=tuple(federation.records),
    )


def _call(job):
    fn, args = job
    return fn(*args)


def map_ordered(fn: Callable[..., R], arg_tuples: Sequence[tuple], workers: int) -> List[R]:
    """Apply fn over a process pool; results come back in input order."""
    if workers <= 1 or len(arg_tuples) <= 1:
        return [fn(*args) for args in arg_tuples]
    with ProcessPoolExecutor(max_workers=min(workers, len(arg_tuples))) as executor:
        return list(executor.map(_call, [(fn, args) for args in arg_tuples]))


def run_replicates(config: ExperimentConfig, workers: int = 1) -> List[ReplicateOutcome]:
    outcomes = map_ordered(run_replicate, [(config, r) for r in range(config.replicates)], workers)
    logger.info(f"Finished {len(outcomes)} replicate(s) with {workers} worker(s)")
    return outcomes
