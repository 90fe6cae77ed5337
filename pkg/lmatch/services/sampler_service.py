"""
Reverse-time stochastic sampler with model-implied mean and covariance.

Each step draws y_s = mu + L z where L L^T = c * (clamp(D) + sigma2 * V V^T),
D = 1 + sigma2 * u. L is built from the r x r Gram of the whitened factor, so
a step costs O(d r^2 + r^3) per chain.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from models.configs import SamplerConfig
from services.schedule_service import NoiseSchedule, spawn_rngs
from services.score_model_service import LowRankPlusDiag, ScoreHessianModel
from utils.debug import debug
from utils.errors import DimensionError, ScheduleError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CovFactor:
    """L = sqrt(c) * D^{1/2} (I + P diag(gamma) P^T), batched over rows.

    P = Vt R holds the Gram eigenvectors mapped back to R^d, so P^T P = diag(lambda)
    and (I + P diag(gamma) P^T)^2 = I + Vt Vt^T.
    """
    cov_scale: np.ndarray
    sqrt_d: np.ndarray
    basis: np.ndarray
    gamma: np.ndarray
    clamp_count: int = 0

    def apply(self, z: np.ndarray) -> np.ndarray:
        """L z for rows of z."""
        inner = z
        if self.basis.shape[-1]:
            coeff = np.einsum("mir,mi->mr", self.basis, z) * self.gamma
            inner = z + np.einsum("mir,mr->mi", self.basis, coeff)
        return np.sqrt(self.cov_scale)[:, None] * self.sqrt_d * inner

    def dense(self) -> np.ndarray:
        """L L^T per row; diagnostics and tests only."""
        d = self.sqrt_d.shape[-1]
        core = np.broadcast_to(np.eye(d), (self.sqrt_d.shape[0], d, d))
        if self.basis.shape[-1]:
            half = core + np.einsum("mir,mr,mjr->mij", self.basis, self.gamma, self.basis)
            core = half @ np.swapaxes(half, 1, 2)
        outer = self.sqrt_d[:, :, None] * core * self.sqrt_d[:, None, :]
        return self.cov_scale[:, None, None] * outer


def cov_factor(H: LowRankPlusDiag, sigma2, cov_scale, clamp_eps: float) -> CovFactor:
    """Gaussian factor of c * (I + sigma2 * H) with the diagonal floored at clamp_eps."""
    u = H.u[None] if H.u.ndim == 1 else H.u
    V = H.V[None] if H.V.ndim == 2 else H.V
    rows = u.shape[0]
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (rows,))
    cov_scale = np.broadcast_to(np.asarray(cov_scale, dtype=np.float64), (rows,))

    D = 1.0 + sigma2[:, None] * u
    clamped = D < clamp_eps
    clamp_count = int(clamped.sum())
    if clamp_count:
        D = np.where(clamped, clamp_eps, D)
    sqrt_d = np.sqrt(D)

    r = V.shape[-1]
    if r == 0:
        return CovFactor(cov_scale, sqrt_d, np.zeros(V.shape), np.zeros((rows, 0)), clamp_count)
    v_tilde = np.sqrt(sigma2)[:, None, None] * V / sqrt_d[:, :, None]
    gram = np.einsum("mir,mis->mrs", v_tilde, v_tilde)
    evals, evecs = np.linalg.eigh(gram)
    # Gram is PSD; rounding can push tiny eigenvalues below zero
    evals = np.clip(evals, 0.0, None)
    gamma = 1.0 / (np.sqrt(1.0 + evals) + 1.0)
    basis = np.einsum("mir,mrs->mis", v_tilde, evecs)
    return CovFactor(cov_scale, sqrt_d, basis, gamma, clamp_count)


@dataclass(frozen=True)
class SamplingResult:
    samples: np.ndarray
    clamp_count: int
    times: np.ndarray


def _step(y: np.ndarray, s: int, t: int, model: ScoreHessianModel, sched: NoiseSchedule,
          cfg: SamplerConfig, rng: np.random.Generator):
    score, hessian = model.evaluate(sched, t, y)
    m, sigma2 = sched.factors(s, t)
    m, sigma2 = float(m), float(sigma2)
    mu = (y + sigma2 * score) / m
    if s == 0 and cfg.final_step == "mean_only":
        return mu, 0
    if cfg.baseline == "score_only":
        hessian = LowRankPlusDiag.zeros(y.shape[0], y.shape[1])
    factor = cov_factor(hessian, sigma2, sigma2 / (m * m), cfg.clamp_eps)
    z = rng.standard_normal(y.shape)
    return mu + factor.apply(z), factor.clamp_count


def sampler_step(y_t: np.ndarray, t: int, model: ScoreHessianModel, sched: NoiseSchedule,
                 cfg: SamplerConfig, rng: np.random.Generator, s: Optional[int] = None) -> np.ndarray:
    """One reverse step from time t to s (default t - 1); rows of y_t are independent chains."""
    s = t - 1 if s is None else s
    if t < 1 or not 0 <= s < t:
        raise ScheduleError(f"reverse step needs 0 <= s < t with t >= 1, got s={s}, t={t}")
    y = np.asarray(y_t, dtype=np.float64)
    single = y.ndim == 1
    out, _ = _step(np.atleast_2d(y), s, t, model, sched, cfg, rng)
    return out[0] if single else out


def sampling_times(T: int, steps: int) -> np.ndarray:
    """Uniform integer sub-grid 0 = tau_0 < ... < tau_steps = T."""
    if not 1 <= steps <= T:
        raise ScheduleError(f"sampling steps must lie in [1, {T}], got {steps}")
    return np.unique(np.floor(np.linspace(0.0, T, steps + 1) + 0.5).astype(np.int64))


def run_sampler(n: int, model: ScoreHessianModel, sched: NoiseSchedule, cfg: SamplerConfig,
                rng: np.random.Generator) -> SamplingResult:
    """Draw n samples starting from N(0, I) at time T.

    Chains are processed in chunks of cfg.chunk_size, each chunk on its own
    substream spawned from rng. The draws depend on chunk_size as well as on
    rng: the first k chunks are the same for any n covering them, but changing
    chunk_size changes every sample.
    """
    times = sampling_times(sched.T, cfg.steps)
    d = model.dim
    if d < 1:
        raise DimensionError(f"model dimension must be positive, got {d}")
    if n == 0:
        return SamplingResult(np.empty((0, d)), 0, times)

    n_chunks = -(-n // cfg.chunk_size)
    root = np.random.SeedSequence(int(rng.integers(0, 2**63)))
    streams = spawn_rngs(root, n_chunks)
    chunks = []
    clamp_count = 0
    for index, stream in enumerate(streams):
        size = min(cfg.chunk_size, n - index * cfg.chunk_size)
        y = stream.standard_normal((size, d))
        for k in range(times.size - 1, 0, -1):
            y, clamps = _step(y, int(times[k - 1]), int(times[k]), model, sched, cfg, stream)
            clamp_count += clamps
        chunks.append(y)

    if clamp_count:
        logger.info(f"sampler clamped {clamp_count} whitened diagonal entries at {cfg.clamp_eps}")
    samples = np.concatenate(chunks, axis=0)
    debug.print(f"run_sampler: n={n} steps={times.size - 1} chunks={n_chunks} clamps={clamp_count}")
    debug.array("samples", samples)
    return SamplingResult(samples, clamp_count, times)
