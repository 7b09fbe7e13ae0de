"""
Command handlers behind the `fedleak` subcommands.

Each handler takes a validated ExperimentConfig plus run options, writes its
data files through an OutputSession and returns a CommandResult.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from app.cli.models import CommandResult, ExitCode
from app.config.experiment import ExperimentConfig, config_hash
from app.core.errors import LabError, MissingPrerequisiteError
from app.core.numerics import RngStream
from app.services import bounds, mbp, protection, validation
from app.services.complexity import build_complexity_report, estimate_constants
from app.services.pipeline import (
    STREAM_CONSTANTS,
    STREAM_MBP,
    build_federation,
    replicate_stream,
    run_replicates,
)
from app.services.reports import OutputSession, read_csv_rows, read_json

logger = logging.getLogger(__name__)

COMPLEXITY_COLUMNS = [
    "s_k_tau", "epsilon_p", "delta_k", "protection_c", "tau", "gamma",
    "dataset_size", "variant", "replicates", "clamped", "sphere_frame",
]
BOUNDS_COLUMNS = ["formula_id", "value", "feasible", "denominator", "inputs", "detail"]
SWEEP_COLUMNS = [
    "rank", "mechanism", "m", "epsilon", "protection_rate", "attack_T_lower",
    "lower_feasible", "denominator", "pruned",
]
VALIDATION_COLUMNS = ["name", "passed", "measured", "expected", "seconds", "detail"]


def _session(config: ExperimentConfig, out_dir: Path, command: str, workers: int) -> OutputSession:
    return OutputSession(out_dir, command, config_hash(config), config.seed, workers)


def cmd_attack(config: ExperimentConfig, out_dir: Path, workers: int = 1, trace_stride: int = 1) -> CommandResult:
    """
    R replicates of session + attack.

    Writes traces.jsonl (one line per replicate), rounds.jsonl (replicate 0),
    complexity.csv (one aggregated row) and constants.json.
    """
    with _session(config, out_dir, "attack", workers) as session:
        outcomes = run_replicates(config, workers)
        for outcome in outcomes:
            session.add_seed_plan(outcome.replicate, outcome.stream)

        session.write_jsonl(
            "traces.jsonl",
            ({"replicate": o.replicate, **o.trace.to_dict(trace_stride)} for o in outcomes),
        )
        session.write_jsonl(
            "rounds.jsonl",
            ({"replicate": 0, **record.to_dict()} for record in outcomes[0].records),
        )

        traces = [o.trace for o in outcomes]
        report = build_complexity_report(
            traces,
            distortions=[o.distortion for o in outcomes],
            protection_costs=[o.protection_c for o in outcomes],
            tau=config.attack.tau,
            gamma=config.bounds.gamma,
            dataset_size=config.clients.samples_per_client,
            variant=config.complexity.variant,
            clamp=config.complexity.clamp,
            sphere_frame=bool(config.mechanism.normalize_to_sphere),
        )
        session.write_csv("complexity.csv", [report.to_row()], COMPLEXITY_COLUMNS)

        try:
            constants = estimate_constants(
                config.model.to_spec(), outcomes[0].theta_attacked, traces,
                config.complexity.bilipschitz_pairs, RngStream(config.seed, STREAM_CONSTANTS),
            )
            session.write_json("constants.json", constants.to_dict())
        except LabError as e:
            logger.warning(f"Constants not estimated ({type(e).__name__}: {e}); constants.json skipped")

        logger.info(f"Attack complexity S_k(tau={config.attack.tau}) = {report.s_k_tau}, eps_p = {report.epsilon_p:.6g}")
        return CommandResult(command="attack", output_dir=str(out_dir), outputs=list(session.written))


def _prerequisites(estimates_dir: Optional[str]) -> Dict[str, Any]:
    """Values recovered from earlier attack / estimate-mbp outputs."""
    found: Dict[str, Any] = {}
    if not estimates_dir:
        return found
    root = Path(estimates_dir)
    if (root / "complexity.csv").exists():
        row = read_csv_rows(root / "complexity.csv")[0]
        found.update(
            tau=float(row["tau"]),
            epsilon_p=float(row["epsilon_p"]),
            delta_k=float(row["delta_k"]),
            dataset_size=int(row["dataset_size"]),
        )
    if (root / "constants.json").exists():
        constants = read_json(root / "constants.json", "attack")
        found.update(
            c_a=constants["c_a_hat"],
            c_b=constants["c_b_hat"],
            c2=constants["c2_hat"],
            # the attack lower bound needs p strictly below 1
            p=min(constants["p_hat"], 1.0 - 1e-6),
        )
    if (root / "mbp.json").exists():
        estimate = read_json(root / "mbp.json", "estimate-mbp")
        found.update(epsilon_hat=estimate["epsilon_hat"], zeta=estimate["zeta"])
    return found


_PRODUCERS = {
    "tau": "attack", "epsilon_p": "attack", "delta_k": "attack", "dataset_size": "attack",
    "c_a": "attack", "c_b": "attack", "c2": "attack", "p": "attack",
    "epsilon_hat": "estimate-mbp", "zeta": "estimate-mbp",
}


def resolve_bound_inputs(config: ExperimentConfig) -> tuple:
    """
    Merge bounds overrides over prior estimates. Returns (BoundInputs, delta_k).

    m defaults to the model's parameter count; epsilon falls back to the
    mechanism's declared level, then to epsilon_hat.
    """
    section = config.bounds
    values = _prerequisites(section.estimates_dir)
    for name in ("m", "epsilon", "epsilon_hat", "zeta", "tau", "epsilon_p", "delta_k", "dataset_size",
                 "c_a", "c_b", "c2", "p"):
        override = getattr(section, name)
        if override is not None:
            values[name] = override
    values.setdefault("m", config.model.to_spec().param_dim)
    if "epsilon" not in values:
        fallback = config.mechanism.nominal_mbp_epsilon or values.get("epsilon_hat")
        if fallback is not None:
            values["epsilon"] = fallback

    missing = [name for name in _PRODUCERS if name not in values]
    if "epsilon" not in values:
        missing.append("epsilon")
    if missing:
        commands = sorted({_PRODUCERS.get(name, "estimate-mbp") for name in missing})
        raise MissingPrerequisiteError(
            f"bound inputs missing: {', '.join(missing)}. Set them under `bounds` or run "
            f"{' and '.join(f'`fedleak {c}`' for c in commands)} and point bounds.estimates_dir at its output"
        )
    delta_k = values.pop("delta_k")
    inputs = bounds.BoundInputs(gamma=section.gamma, c_const=section.c_const, **values)
    return inputs, delta_k


def cmd_bounds(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> CommandResult:
    """Evaluate every bound once; one bounds.csv row per formula."""
    inputs, delta_k = resolve_bound_inputs(config)
    with _session(config, out_dir, "bounds", workers) as session:
        reports = bounds.evaluate_all(inputs, delta_k)
        session.write_csv("bounds.csv", [r.to_row() for r in reports], BOUNDS_COLUMNS)
        return CommandResult(command="bounds", output_dir=str(out_dir), outputs=list(session.written))


def cmd_estimate_mbp(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> CommandResult:
    """Attack-simulation MBP estimate on the target client of replicate 0."""
    with _session(config, out_dir, "estimate-mbp", workers) as session:
        federation = build_federation(config, replicate_stream(config, 0))
        dataset = federation.clients[config.clients.target_client]
        rng = RngStream(config.seed, STREAM_MBP)
        session.add_seed_plan(0, rng.key())
        if config.mbp.over_rounds:
            estimate = mbp.estimate_mbp_over_rounds(
                federation.spec, [r.theta_before for r in federation.records], config.mechanism, dataset,
                config.attack, config.mbp, rng, workers,
            )
        else:
            theta = federation.records[config.mbp.theta_round].theta_before
            estimate = mbp.estimate_mbp_level(
                federation.spec, theta, config.mechanism, dataset, config.attack, config.mbp, rng, workers,
            )
        payload = estimate.to_dict()
        nominal = protection.nominal_privacy(config.mechanism)
        payload["nominal_privacy"] = nominal.to_dict() if nominal is not None else None
        session.write_json("mbp.json", payload)
        return CommandResult(command="estimate-mbp", output_dir=str(out_dir), outputs=list(session.written))


def cmd_sweep(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> CommandResult:
    """Bound-pruned design table over (mechanism, m, epsilon)."""
    sweep = config.sweep
    constants = bounds.BoundInputs(
        tau=sweep.tau,
        epsilon_p=sweep.epsilon_p,
        dataset_size=sweep.dataset_size,
        gamma=sweep.gamma,
        c_a=sweep.c_a,
        c_b=sweep.c_b,
        c2=sweep.c2,
        p=sweep.p,
    )
    rows = bounds.sweep_designs(
        sweep.epsilons, sweep.dims, sweep.mechanisms, sweep.t_budget, constants,
        sweep.mechanism_constants, workers,
    )
    with _session(config, out_dir, "sweep", workers) as session:
        session.write_csv("sweep.csv", [r.to_row() for r in rows], SWEEP_COLUMNS)
        return CommandResult(command="sweep", output_dir=str(out_dir), outputs=list(session.written))


def cmd_validate(
    config: ExperimentConfig,
    out_dir: Path,
    workers: int = 1,
    checks: Optional[Sequence[str]] = None,
) -> CommandResult:
    """Run the acceptance checks; exit status 1 when any fails."""
    selected = checks if checks else config.validate_.checks
    with _session(config, out_dir, "validate", workers) as session:
        results = validation.run_checks(config, selected, workers, attack_runner=cmd_attack)
        session.write_csv("validation.csv", [r.model_dump() for r in results], VALIDATION_COLUMNS)
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.warning(f"{len(failed)}/{len(results)} checks failed: {', '.join(failed)}")
        else:
            logger.info(f"All {len(results)} checks passed")
        return CommandResult(
            command="validate",
            output_dir=str(out_dir),
            outputs=list(session.written),
            exit_code=ExitCode.CHECK_FAILED if failed else ExitCode.SUCCESS,
            checks=results,
        )
