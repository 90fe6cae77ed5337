"""
Pydantic models for artifacts written to disk: checkpoints, trajectories, tables and reports.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from config import settings
from models.configs import MixtureSpec, ScheduleConfig


class CheckpointRecord(BaseModel):
    """Model checkpoint: an MLP (flat phi) or an analytic mixture oracle."""
    format_version: int = settings.CHECKPOINT_FORMAT_VERSION
    kind: Literal["mlp", "mixture_oracle"]
    dim: int
    schedule: ScheduleConfig
    width: Optional[int] = None
    rank: Optional[int] = None
    activation: Optional[str] = None
    seed: Optional[int] = None
    phi: Optional[List[float]] = None
    mixture: Optional[MixtureSpec] = None
    config_hash: Optional[str] = None


class TrajectoryRecord(BaseModel):
    """One forward path as a JSON-lines record; states and noises row-major."""
    dim: int
    grid: List[int]
    states: List[float]
    noises: List[float]
    seed: Optional[int] = None


class TelemetryRow(BaseModel):
    """One row of the loss-curve CSV."""
    step: int
    loss: float
    grad_norm: float
    barrier_count: int = 0
    wall_ms: float = 0.0


class ParamErrorRow(BaseModel):
    """One parameter row of a Table-1-shaped error table."""
    param: str
    MAE: float
    std_error: float
    n: int
    method: str


class MomentProbe(BaseModel):
    """Deviation of the closed-form conditional moments at one probe point."""
    point: List[float]
    mean_deviation: float
    cov_deviation: float
    mean_se: Optional[float] = None
    cov_se: Optional[float] = None
    effective_samples: Optional[float] = None
    within_tolerance: bool


class MomentCheckReport(BaseModel):
    """Conditional-moment verification at one (s, t) pair."""
    s: int
    t: int
    method: Literal["analytic", "monte_carlo"]
    max_mean_deviation: float
    max_cov_deviation: float
    passed: bool
    budget_ok: bool = True
    probes: List[MomentProbe] = Field(default_factory=list)


class CheckResult(BaseModel):
    """Outcome of one verification check."""
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


class CheckReport(BaseModel):
    """Full verification report emitted by the `check` verb."""
    schema_version: int = settings.REPORT_SCHEMA_VERSION
    passed: bool
    checks: List[CheckResult]
    max_moment_deviation: float
    provenance: Dict[str, Any] = Field(default_factory=dict)


class RunSummary(BaseModel):
    """Schema-versioned summary JSON written by train and experiment."""
    schema_version: int = settings.SUMMARY_SCHEMA_VERSION
    command: str
    preset: str
    provenance: Dict[str, Any]
    results: Dict[str, Any] = Field(default_factory=dict)
