"""
Models for command outputs: run manifests and validation check results.
"""
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class ExitCode(int, Enum):
    """Process exit statuses of the CLI"""
    SUCCESS = 0
    CHECK_FAILED = 1
    CONFIG_ERROR = 2
    NUMERIC_ERROR = 3


class SeedPlanEntry(BaseModel):
    """Stream key handed to one replicate"""

    replicate: int = Field(..., description="Replicate index")
    stream: List[int] = Field(..., description="(seed, stream_id, *path) of the replicate's RngStream")


class RunManifest(BaseModel):
    """Provenance of a command run; timestamps live here and never in data files"""

    command: str = Field(..., description="Subcommand that produced the outputs")
    config_hash: str = Field(..., description="SHA-256 of the canonical configuration JSON")
    tool_version: str = Field(..., description="fedleak-lab version")
    seed: int = Field(..., description="Master seed")
    workers: int = Field(default=1, description="Worker pool size")
    seed_plan: List[SeedPlanEntry] = Field(default_factory=list, description="Per-replicate stream ids")
    started_at: str = Field(..., description="UTC start time, ISO 8601")
    finished_at: Optional[str] = Field(None, description="UTC end time, ISO 8601")
    outputs: List[str] = Field(default_factory=list, description="Data files written, relative to the output dir")


class CheckResult(BaseModel):
    """Outcome of one acceptance check"""

    name: str = Field(..., description="Check name")
    passed: bool = Field(..., description="Whether the measured value met the expectation")
    measured: str = Field(default="", description="Measured value(s)")
    expected: str = Field(default="", description="Expected value or range")
    detail: Dict[str, Any] = Field(default_factory=dict, description="Full inputs for failed checks")
    seconds: float = Field(default=0.0, description="Wall time of the check")


class CommandResult(BaseModel):
    """What a command handler hands back to the entry point"""

    command: str
    output_dir: str
    outputs: List[str] = Field(default_factory=list)
    exit_code: ExitCode = Field(default=ExitCode.SUCCESS)
    checks: List[CheckResult] = Field(default_factory=list)
