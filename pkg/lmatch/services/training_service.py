"""
Training loops: Adam over MLP weights phi and quasi-MLE over mixture parameters theta.

Every step draws a fresh time grid per sample (or reuses per-sample grids with
grid_resample = "fixed"), simulates the exact forward transitions on it and
takes one Adam step on the LM or score-matching objective.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from config import settings
from models.configs import TrainConfig
from models.records import TelemetryRow
from services.likelihood_service import ObjectiveValue, lm_objective, sm_objective
from services.schedule_service import NoiseSchedule, forward_sample_batch, sample_time_grids
from services.score_model_service import GaussianMixtureOracle, MixtureParams, MlpModel
from utils.debug import debug
from utils.errors import (
    DimensionError,
    FamilyError,
    InsufficientSamplesError,
    LinearAlgebraError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

CheckpointCallback = Callable[[int, object], None]


class Adam:
    """Adam with bias-corrected moments over one flat parameter vector."""

    def __init__(self, size: int, lr: float = settings.ADAM_LR, betas=settings.ADAM_BETAS,
                 eps: float = settings.ADAM_EPS):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated parameters; the input array is left untouched."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class FitResult:
    """Final parameters plus per-step telemetry."""
    params: np.ndarray
    loss_history: np.ndarray
    wall_time: float
    barrier_count: int = 0
    telemetry: List[TelemetryRow] = field(default_factory=list)
    model: Optional[MlpModel] = None
    theta: Optional[MixtureParams] = None

    @property
    def steps(self) -> int:
        return self.loss_history.size


def _objective(cfg: TrainConfig):
    return lm_objective if cfg.objective == "lm" else sm_objective


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _optimize(data: np.ndarray, params: np.ndarray, build: Callable, sched: NoiseSchedule,
              cfg: TrainConfig, rng: np.random.Generator, batch_size: int,
              checkpoint: Optional[CheckpointCallback]) -> FitResult:
    """Shared Adam loop; build(params) returns the model the objective is evaluated on."""
    objective = _objective(cfg)
    obj_cfg = cfg.objective_config()
    optimizer = Adam(params.size, cfg.lr, cfg.adam_betas, cfg.adam_eps)
    fixed_grids = None
    if cfg.grid_resample == "fixed":
        fixed_grids = sample_time_grids(data.shape[0], obj_cfg.N, sched.T, rng)

    telemetry: List[TelemetryRow] = []
    losses: List[float] = []
    barrier_total = 0
    nan_run = 0
    step = 0
    started = time.perf_counter()

    for epoch in range(cfg.epochs):
        for index in _batches(data.shape[0], batch_size, rng):
            step_start = time.perf_counter()
            step += 1
            x0 = data[index]
            if fixed_grids is None:
                grids = sample_time_grids(index.size, obj_cfg.N, sched.T, rng)
            else:
                grids = fixed_grids[index]
            batch = forward_sample_batch(x0, grids, sched, rng)
            try:
                value: ObjectiveValue = objective(batch, build(params), sched, obj_cfg)
            except LinearAlgebraError as exc:
                logger.warning(f"step {step}: {exc}")
                value = ObjectiveValue(float("nan"), np.full(params.size, np.nan))
            grad = value.grad
            grad_norm = float(np.linalg.norm(grad))
            losses.append(value.loss)
            barrier_total += value.barrier_count

            if not (np.isfinite(value.loss) and np.isfinite(grad_norm)):
                nan_run += 1
                logger.warning(f"non-finite loss at step {step} ({nan_run} consecutive)")
                if nan_run >= cfg.max_nan_steps:
                    raise TrainingDivergedError(step, nan_run)
            else:
                nan_run = 0
                if cfg.grad_clip is not None and grad_norm > cfg.grad_clip:
                    grad = grad * (cfg.grad_clip / grad_norm)
                params = optimizer.step(params, grad)

            wall_ms = 0.0 if obj_cfg.strict else 1e3 * (time.perf_counter() - step_start)
            telemetry.append(TelemetryRow(step=step, loss=value.loss, grad_norm=grad_norm,
                                          barrier_count=value.barrier_count, wall_ms=wall_ms))
            debug.metrics(f"epoch {epoch} step {step}", loss=float(value.loss), grad_norm=float(grad_norm),
                          barriers=value.barrier_count)
            if checkpoint is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                checkpoint(step, build(params))

    wall_time = time.perf_counter() - started
    logger.info(f"{cfg.objective} training finished: {step} steps, final loss {losses[-1]:.6g}")
    return FitResult(params=params, loss_history=np.asarray(losses), wall_time=wall_time,
                     barrier_count=barrier_total, telemetry=telemetry)


def train_mlp(data: np.ndarray, model0: MlpModel, sched: NoiseSchedule, cfg: TrainConfig,
              rng: np.random.Generator, checkpoint: Optional[CheckpointCallback] = None) -> FitResult:
    """Fit MLP weights by Adam on the LM or score-matching objective."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != model0.dim:
        raise DimensionError(f"data dimension {data.shape[1]} does not match model dimension {model0.dim}")
    if data.shape[0] < cfg.batch_size:
        raise InsufficientSamplesError(f"need at least batch_size={cfg.batch_size} rows, got {data.shape[0]}")

    result = _optimize(data, model0.phi.copy(), model0.with_params, sched, cfg, rng, cfg.batch_size, checkpoint)
    result.model = model0.with_params(result.params)
    return result


def fit_mixture_qmle(data: np.ndarray, init: MixtureParams, sched: NoiseSchedule, cfg: TrainConfig,
                     rng: np.random.Generator, K: Optional[int] = None,
                     checkpoint: Optional[CheckpointCallback] = None) -> FitResult:
    """Quasi-MLE of Gaussian mixture parameters using the analytic score and Hessian.

    Adam runs on the unconstrained vector (weight logits, means, log scales);
    gradients come from central differences inside the objective. Batches
    larger than the data fall back to full-batch steps.
    """
    if init.family != "gaussian":
        raise FamilyError("quasi-MLE needs the gaussian family")
    if K is not None and K != init.K:
        raise FamilyError(f"init has {init.K} components, expected {K}")
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != init.dim:
        raise DimensionError(f"data dimension {data.shape[1]} does not match mixture dimension {init.dim}")

    def build(vector: np.ndarray) -> GaussianMixtureOracle:
        return GaussianMixtureOracle(init.from_unconstrained(vector))

    batch_size = min(cfg.batch_size, data.shape[0])
    result = _optimize(data, init.to_unconstrained(), build, sched, cfg, rng, batch_size, checkpoint)
    result.theta = init.from_unconstrained(result.params)
    return result


def match_components(estimate: MixtureParams, truth: MixtureParams) -> MixtureParams:
    """Reorder estimated components to the truth by minimal total mean distance."""
    if estimate.K != truth.K or estimate.dim != truth.dim:
        raise DimensionError("estimate and truth must share K and d")
    rows, cols = linear_sum_assignment(cdist(estimate.means, truth.means))
    return estimate.permuted(rows[np.argsort(cols)])


def kmeans_init(data: np.ndarray, K: int, rng: np.random.Generator) -> MixtureParams:
    """Starting mixture from k-means++ clusters: cluster means, shares and isotropic spreads."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, d = data.shape
    if n < K:
        raise InsufficientSamplesError(f"need at least {K} rows to initialise {K} components")
    centroids, labels = kmeans2(data, K, minit="++", seed=rng)
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    overall = float(np.sqrt(np.mean(np.var(data, axis=0)))) or 1.0
    scales = np.empty(K)
    for k in range(K):
        members = data[labels == k]
        spread = np.sqrt(np.mean((members - centroids[k]) ** 2)) if members.shape[0] > 1 else 0.0
        scales[k] = spread if spread > 0 else overall
    weights = np.maximum(counts, 1.0)
    return MixtureParams(weights / weights.sum(), centroids, scales)
