"""
Pydantic models for configuration validation.
"""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from config import settings


class StrictModel(BaseModel):
    """Base model rejecting unknown keys so typos in config files surface."""
    model_config = ConfigDict(extra="forbid")


class ScheduleConfig(StrictModel):
    """Noise schedule spec, serialized as {kind, T, params}."""
    kind: Literal["linear", "constant"] = settings.DEFAULT_SCHEDULE_KIND
    T: int = Field(settings.DEFAULT_T, ge=1)
    params: Dict[str, float] = Field(default_factory=dict)


class MixtureSpec(StrictModel):
    """JSON form of mixture parameters theta = (weights, means, scales)."""
    weights: List[float]
    means: List[List[float]]
    scales: List[PositiveFloat]
    family: Literal["gaussian", "student_t"] = "gaussian"
    df: Optional[PositiveFloat] = None

    @model_validator(mode="after")
    def _check_shapes(self):
        k = len(self.weights)
        if k == 0:
            raise ValueError("mixture needs at least one component")
        if len(self.means) != k or len(self.scales) != k:
            raise ValueError("weights, means and scales must have the same number of components")
        dims = {len(m) for m in self.means}
        if len(dims) != 1 or 0 in dims:
            raise ValueError("all component means must share one positive dimension")
        if any(w <= 0 or w > 1 for w in self.weights):
            raise ValueError("weights must lie in (0, 1]")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if self.family == "student_t" and self.df is None:
            raise ValueError("student_t family requires df")
        return self


class LmConfig(StrictModel):
    """Options of the LM and score-matching objectives."""
    N: int = Field(8, ge=1)
    weighting: Literal["none"] = "none"
    sm_lambda: Literal["sigma2", "one"] = "sigma2"
    include_logdet: bool = True
    freeze_hessian: bool = False
    eps_pos: PositiveFloat = settings.EPS_POS
    barrier_weight: PositiveFloat = settings.BARRIER_WEIGHT
    fd_rel_step: PositiveFloat = settings.FD_REL_STEP
    strict: bool = settings.STRICT_MODE


class TrainConfig(StrictModel):
    """Stochastic-gradient training options. lr = 0 freezes parameters."""
    objective: Literal["lm", "sm"] = "lm"
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(128, ge=1)
    lr: float = Field(settings.ADAM_LR, ge=0.0)
    adam_betas: Tuple[float, float] = settings.ADAM_BETAS
    adam_eps: PositiveFloat = settings.ADAM_EPS
    N_transitions: int = Field(8, ge=1)
    seed: int = 0
    grad_clip: Optional[PositiveFloat] = None
    checkpoint_every: Optional[int] = Field(None, ge=1)
    grid_resample: Literal["epoch", "fixed"] = "epoch"
    max_nan_steps: int = Field(settings.MAX_NAN_STEPS, ge=1)
    lm: LmConfig = Field(default_factory=LmConfig)

    @field_validator("adam_betas")
    @classmethod
    def _check_betas(cls, value):
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError("adam betas must lie in [0, 1)")
        return value

    def objective_config(self) -> LmConfig:
        """LmConfig with N taken from N_transitions."""
        return self.lm.model_copy(update={"N": self.N_transitions})


class SamplerConfig(StrictModel):
    """Reverse-time sampler options."""
    steps: int = Field(1000, ge=1)
    clamp_eps: float = Field(settings.CLAMP_EPS, gt=0.0, lt=1.0)
    final_step: Literal["mean_only", "noisy"] = "mean_only"
    baseline: Literal["lm", "score_only"] = "lm"
    chunk_size: int = Field(settings.SAMPLER_CHUNK, ge=1)


class MmdConfig(StrictModel):
    """Multi-bandwidth Gaussian-kernel MMD options."""
    bandwidths: List[PositiveFloat] = Field(default_factory=lambda: list(settings.DEFAULT_BANDWIDTHS), min_length=1)
    estimator: Literal["biased_v", "unbiased_u"] = "biased_v"
    standardize: bool = False


class ModelConfig(StrictModel):
    """MLP architecture."""
    width: int = Field(settings.DEFAULT_WIDTH, ge=1)
    rank: int = Field(settings.DEFAULT_RANK, ge=0)
    activation: Literal["silu"] = "silu"


class DataConfig(StrictModel):
    """Synthetic target distribution and sample sizes."""
    mixture: MixtureSpec
    n_train: int = Field(1000, ge=1)
    n_eval: int = Field(2000, ge=1)


class StudyConfig(StrictModel):
    """Sweeps run by the `experiment` verb."""
    methods: List[Literal["lm", "sm"]] = Field(default_factory=lambda: ["lm", "sm"], min_length=1)
    N_values: List[int] = Field(default_factory=lambda: [2, 3, 8], min_length=1)
    ranks: List[int] = Field(default_factory=list)
    steps_values: List[int] = Field(default_factory=lambda: [5, 10, 20, 50, 1000], min_length=1)
    sample_sizes: List[int] = Field(default_factory=lambda: [100, 200], min_length=1)
    oracle_samples: int = Field(10000, ge=0)
    workers: int = Field(settings.WORKERS, ge=1)


PresetName = Literal["mixture1d_gauss", "mixture1d_t3", "mixture2d_paramest", "oracle_sampler_check", "custom"]


class ExperimentConfig(StrictModel):
    """Complete experiment manifest after preset merging."""
    preset: PresetName
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    data: DataConfig
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    eval: MmdConfig = Field(default_factory=MmdConfig)
    study: StudyConfig = Field(default_factory=StudyConfig)
    seeds: List[int] = Field(min_length=1)
    output_dir: str = settings.OUTPUT_DIR
    strict: bool = settings.STRICT_MODE

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.sampler.steps > self.schedule.T:
            raise ValueError(f"sampler.steps ({self.sampler.steps}) exceeds schedule.T ({self.schedule.T})")
        dim = len(self.data.mixture.means[0])
        if self.model.rank > dim:
            raise ValueError(f"model.rank ({self.model.rank}) exceeds data dimension ({dim})")
        return self
