"""
Experiment configuration schema.

One JSON document with sections mirroring the lab modules. Unknown keys are
errors so a typo never silently changes an experiment.
"""
import hashlib
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.errors import ConfigError
from app.core.models import ModelKind, ModelSpec

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MechanismKind(str, Enum):
    """Gradient-distortion mechanisms"""
    IDENTITY = "identity"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    SPHERE_CAP = "sphere_cap"


class AttackInit(str, Enum):
    GAUSSIAN_RANDOM = "gaussian_random"
    ZEROS = "zeros"
    WARM_START = "warm_start"


class MetricKind(str, Enum):
    MSE = "mse"
    PSNR = "psnr"


class ComplexityVariant(str, Enum):
    RUNNING_MEAN = "running_mean"
    LAST_ITERATE = "last_iterate"


class DataGenerator(str, Enum):
    UNIFORM_BOX = "uniform_box"
    TWO_GAUSSIANS = "two_gaussians"


class ModelSection(_Section):
    kind: ModelKind = Field(default=ModelKind.LOGISTIC_REGRESSION, description="Model family")
    input_dim: int = Field(default=2, ge=1, description="Feature dimension")
    num_classes: int = Field(default=2, ge=2, description="Number of classes")
    hidden_dim: Optional[int] = Field(default=None, ge=1, description="Hidden width (mlp1 only)")
    theta_scale: float = Field(default=0.5, gt=0, description="Std of the Gaussian initial parameters")

    def to_spec(self) -> ModelSpec:
        return ModelSpec(self.kind, self.input_dim, self.num_classes, self.hidden_dim)

    @model_validator(mode="after")
    def _check_hidden(self):
        if self.kind is ModelKind.MLP1 and self.hidden_dim is None:
            raise ValueError("mlp1 requires hidden_dim")
        if self.kind is ModelKind.LOGISTIC_REGRESSION and self.hidden_dim is not None:
            raise ValueError("hidden_dim is only valid for mlp1")
        return self


class ClientsSection(_Section):
    count: int = Field(default=4, ge=1, description="Number of clients K")
    samples_per_client: int = Field(default=4, ge=1, description="Local dataset size m_k")
    generator: DataGenerator = Field(default=DataGenerator.TWO_GAUSSIANS, description="Synthetic data generator")
    target_client: int = Field(default=0, ge=0, description="Client attacked by the server")


class FederatedSection(_Section):
    rounds: int = Field(default=3, ge=1, description="FedSGD rounds per session")
    lr: float = Field(default=0.1, gt=0, description="Server learning rate")
    attack_round: int = Field(default=0, ge=0, description="Round whose upload is attacked")


class MechanismConfig(_Section):
    """Protection mechanism description."""
    kind: MechanismKind = Field(default=MechanismKind.IDENTITY, description="Mechanism family")
    noise_scale: float = Field(
        default=0.0, ge=0,
        description="Noise std (gaussian), Laplace scale (laplace) or cap parameter eta (sphere_cap)",
    )
    nominal_mbp_epsilon: Optional[float] = Field(default=None, gt=0, description="Declared MBP level")
    normalize_to_sphere: Optional[bool] = Field(
        default=None,
        description="Project W^O (and the release) to the unit sphere; defaults to true for sphere_cap, else false",
    )

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.kind is MechanismKind.IDENTITY and self.noise_scale != 0.0:
            raise ValueError("identity mechanism requires noise_scale = 0")
        if self.normalize_to_sphere is None:
            object.__setattr__(self, "normalize_to_sphere", self.kind is MechanismKind.SPHERE_CAP)
        if self.kind is MechanismKind.SPHERE_CAP and not self.normalize_to_sphere:
            raise ValueError("sphere_cap requires normalize_to_sphere = true")
        return self


class AttackConfig(_Section):
    """DLG attacker settings."""
    max_iters: int = Field(default=300, ge=1, description="T_max descent steps")
    step_size: float = Field(default=1.0, gt=0, description="Fixed gradient-descent step")
    init: AttackInit = Field(default=AttackInit.GAUSSIAN_RANDOM, description="Reconstruction initialization")
    init_scale: float = Field(default=0.1, ge=0, description="Std of the Gaussian initialization")
    metric: MetricKind = Field(default=MetricKind.MSE, description="Error metric d(.,.)")
    psnr_peak: float = Field(default=1.0, gt=0, description="PSNR peak value")
    tau: float = Field(default=0.05, gt=0, description="Error threshold tau")
    seed: int = Field(default=0, ge=0, le=2**64 - 1, description="Attack RNG seed")
    clamp_box: bool = Field(default=True, description="Project reconstructions into [0,1] each step")
    normalize_gradients: bool = Field(default=False, description="Match gradient directions instead of raw gradients")
    record_iterates: bool = Field(default=False, description="Keep every iterate in the trace")


class ComplexitySection(_Section):
    variant: ComplexityVariant = Field(default=ComplexityVariant.RUNNING_MEAN, description="S_k(tau) definition")
    clamp: bool = Field(default=True, description="Clip per-(t,i) ratios to [0,1] for epsilon_p")
    trials: int = Field(default=2000, ge=1, description="Monte-Carlo trials for protection complexity C")
    bilipschitz_pairs: int = Field(default=200, ge=2, description="Sampled pairs for (c_a, c_b)")


class MbpConfig(_Section):
    """Attack-simulation MBP estimator settings."""
    t_sim: int = Field(default=50, ge=1, description="Simulation rounds T_sim per data point")
    omega: float = Field(default=0.01, ge=0, description="Success threshold on reconstruction MSE")
    batch_size: int = Field(default=1, ge=1, description="Batch slots S per trial")
    prior: Optional[List[float]] = Field(default=None, description="f_D(d); uniform when absent")
    delta: float = Field(default=0.05, gt=0, lt=1, description="Confidence parameter for zeta")
    c_const: float = Field(default=1.0, gt=0, description="Constant c in zeta")
    beta: float = Field(default=0.5, gt=0, description="Relative precision for the reliability bound")
    theta_round: int = Field(default=0, ge=0, description="Evaluate at theta before this FedSGD round")
    over_rounds: bool = Field(default=False, description="Also take the max over every round's theta")

    @field_validator("prior")
    @classmethod
    def _check_prior(cls, prior):
        if prior is None:
            return prior
        if len(prior) == 0 or any(not (p > 0) for p in prior):
            raise ValueError("prior entries must be > 0")
        if abs(math.fsum(prior) - 1.0) > 1e-12:
            raise ValueError("prior must sum to 1")
        return prior


class BoundsSection(_Section):
    """Overrides for bound inputs; absent values come from estimates_dir."""
    m: Optional[int] = Field(default=None, ge=1)
    epsilon: Optional[float] = Field(default=None, gt=0)
    epsilon_hat: Optional[float] = Field(default=None, gt=0)
    zeta: Optional[float] = Field(default=None, ge=0)
    tau: Optional[float] = Field(default=None, gt=0)
    epsilon_p: Optional[float] = Field(default=None, le=1)
    delta_k: Optional[float] = Field(default=None, ge=0)
    dataset_size: Optional[int] = Field(default=None, ge=1)
    gamma: float = Field(default=0.1, gt=0, lt=1)
    c_a: Optional[float] = Field(default=None, gt=0)
    c_b: Optional[float] = Field(default=None, gt=0)
    c2: Optional[float] = Field(default=None, gt=0)
    p: Optional[float] = Field(default=None, gt=0, lt=1)
    c_const: float = Field(default=1.0, gt=0, description="Constant c of the protection lower bound")
    estimates_dir: Optional[str] = Field(default=None, description="Output dir of a prior attack run")


class SweepSection(_Section):
    epsilons: List[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0, 4.0])
    dims: List[int] = Field(default_factory=lambda: [16, 64])
    mechanisms: List[MechanismKind] = Field(default_factory=lambda: [MechanismKind.SPHERE_CAP])
    t_budget: float = Field(default=100.0, gt=0, description="Attacker iteration budget")
    mechanism_constants: Dict[str, float] = Field(default_factory=dict)
    tau: float = Field(default=0.05, gt=0)
    epsilon_p: float = Field(default=0.5, le=1)
    dataset_size: int = Field(default=4, ge=1)
    gamma: float = Field(default=0.1, gt=0, lt=1)
    c_a: float = Field(default=1.0, gt=0)
    c_b: float = Field(default=1.0, gt=0)
    c2: float = Field(default=1.0, gt=0)
    p: float = Field(default=0.5, gt=0, lt=1)

    @field_validator("epsilons")
    @classmethod
    def _positive_eps(cls, values):
        if any(not (e > 0) for e in values):
            raise ValueError("sweep epsilons must be > 0")
        return values

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, values):
        if any(m < 1 for m in values):
            raise ValueError("sweep dims must be >= 1")
        return values


class ValidateSection(_Section):
    checks: List[str] = Field(default_factory=list, description="Subset of checks; empty runs all")
    tolerance: float = Field(default=1.0, ge=0, description="Multiplier on every statistical tolerance")
    gradient_instances: int = Field(default=100, ge=1)
    oracle_dim: int = Field(default=16, ge=1)
    oracle_sigmas: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2])
    oracle_trials: int = Field(default=100_000, ge=1)
    rate_dim: int = Field(default=64, ge=4, description="Gradient dimension m of the rate model; even")
    rate_epsilons: List[float] = Field(
        default_factory=lambda: [0.1, 0.15, 0.22, 0.33, 0.5, 0.75, 1.25, 1.6, 2.0, 2.5, 3.2, 4.0]
    )
    rate_trials: int = Field(default=20_000, ge=1)
    rate_points: int = Field(default=32, ge=2, description="Data points whose gradients are released")
    rate_t_sim: int = Field(default=20, ge=1, description="Attack trials per point behind each epsilon_hat")
    monotonicity_seeds: int = Field(default=20, ge=1)
    monotonicity_sigmas: List[float] = Field(default_factory=lambda: [0.0, 0.5, 2.0])
    monotonicity_tau: float = Field(default=0.01, gt=0)
    sandwich_tau: Optional[float] = Field(
        default=None, gt=0, description="Threshold for bound_sandwich; unset uses the error reached at T_max / 2"
    )
    mbp_replicates: int = Field(default=10, ge=2)
    mbp_t_sim_small: int = Field(default=100, ge=1)
    mbp_t_sim_large: int = Field(default=400, ge=1)
    hoeffding_resamples: int = Field(default=200, ge=1)
    hoeffding_dataset_size: int = Field(default=100, ge=1)
    hoeffding_gamma: float = Field(default=0.1, gt=0, lt=1)
    conversion_samples: int = Field(default=1000, ge=1)

    @field_validator("rate_dim")
    @classmethod
    def _even_rate_dim(cls, value):
        # two-class logistic regression has 2 * (input_dim + 1) parameters
        if value % 2:
            raise ValueError(f"validate.rate_dim must be even, got {value}")
        return value


class ExperimentConfig(_Section):
    """Full experiment configuration."""
    model: ModelSection = Field(default_factory=ModelSection)
    clients: ClientsSection = Field(default_factory=ClientsSection)
    federated: FederatedSection = Field(default_factory=FederatedSection)
    mechanism: MechanismConfig = Field(default_factory=MechanismConfig)
    attack: AttackConfig = Field(default_factory=AttackConfig)
    complexity: ComplexitySection = Field(default_factory=ComplexitySection)
    mbp: MbpConfig = Field(default_factory=MbpConfig)
    bounds: BoundsSection = Field(default_factory=BoundsSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    validate_: ValidateSection = Field(default_factory=ValidateSection, alias="validate")
    replicates: int = Field(default=3, ge=1, description="Replicates R")
    seed: int = Field(default=0, ge=0, le=2**64 - 1, description="Master seed")
    output_dir: str = Field(default="runs/default", description="Directory for data files")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _check_cross_fields(self):
        if self.clients.target_client >= self.clients.count:
            raise ValueError("clients.target_client must be < clients.count")
        if self.federated.attack_round >= self.federated.rounds:
            raise ValueError("federated.attack_round must be < federated.rounds")
        if self.mbp.theta_round >= self.federated.rounds:
            raise ValueError("mbp.theta_round must be < federated.rounds")
        if self.mbp.batch_size > self.clients.samples_per_client:
            raise ValueError("mbp.batch_size must be <= clients.samples_per_client")
        if self.mbp.prior is not None and len(self.mbp.prior) != self.clients.samples_per_client:
            raise ValueError("mbp.prior must have one entry per sample of the target client")
        return self


def _format_issue(err: dict) -> str:
    loc = ".".join(str(part) for part in err.get("loc", ())) or "<root>"
    return f"{loc}: {err.get('msg', 'invalid value')}"


def parse_experiment_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{source}: invalid configuration", [_format_issue(err) for err in e.errors()]) from e


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    config = parse_experiment_config(text, source=str(path))
    logger.info(f"Loaded experiment config from {path}")
    return config


def dump_experiment_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2, by_alias=True)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_overrides(config: ExperimentConfig, **updates) -> ExperimentConfig:
    """Copy with top-level fields replaced, re-validated."""
    data = config.model_dump(mode="json", by_alias=True)
    for key, value in updates.items():
        if value is not None:
            data[key] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("invalid override", [_format_issue(err) for err in e.errors()]) from e
