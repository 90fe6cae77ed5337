"""
Quasi-likelihood objectives over reverse transitions.

The Gaussian surrogate for X_s | X_t has mean (x_t + sigma2 * score) / m and
covariance c * (I + sigma2 * H) with c = sigma2 / m^2 and H = diag(u) + V V^T.
Quadratic forms and log-determinants go through the whitened r x r core
I_r + Vt^T Vt, where Vt = sigma * D^{-1/2} V and D = 1 + sigma2 * u, so no
d x d matrix is formed.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from models.configs import LmConfig
from services.schedule_service import NoiseSchedule, Trajectory, TrajectoryBatch
from services.score_model_service import (
    GaussianMixtureOracle,
    LowRankPlusDiag,
    MlpModel,
    ScoreHessianModel,
)
from utils.debug import debug
from utils.errors import CovariancePositivityError, DimensionError, InsufficientSamplesError, LinearAlgebraError
from utils.numdiff import fd_gradient

logger = logging.getLogger(__name__)

BatchLike = Union[TrajectoryBatch, Sequence[Trajectory]]


@dataclass(frozen=True)
class TransitionMoments:
    """Conditional mean and structured covariance c * (I + sigma2 * H)."""
    mu: np.ndarray
    cov_scale: float
    sigma2: float
    hessian: LowRankPlusDiag

    def dense_covariance(self) -> np.ndarray:
        """Materialise the covariance; small d only."""
        d = self.mu.shape[-1]
        return self.cov_scale * (np.eye(d) + self.sigma2 * self.hessian.dense())


def conditional_moments(score: np.ndarray, hessian: LowRankPlusDiag, sched: NoiseSchedule,
                        s: int, t: int, x_t: np.ndarray) -> TransitionMoments:
    """Mean and covariance of X_s given X_t = x_t implied by a score and Hessian at time t."""
    m, sigma2 = sched.factors(s, t)
    m, sigma2 = float(m), float(sigma2)
    mu = (np.asarray(x_t, dtype=np.float64) + sigma2 * np.asarray(score, dtype=np.float64)) / m
    return TransitionMoments(mu=mu, cov_scale=sigma2 / (m * m), sigma2=sigma2, hessian=hessian)


# --- structured kernels ----------------------------------------------------------

def _whiten(u: np.ndarray, V: np.ndarray, sigma2: np.ndarray):
    """(D, sqrt(D), Vt, gram) for batched u (M, d), V (M, d, r), sigma2 (M,)."""
    D = 1.0 + sigma2[:, None] * u
    if not np.all(D > 0.0):
        raise CovariancePositivityError(float(np.nanmin(D)))
    sqrt_d = np.sqrt(D)
    v_tilde = np.sqrt(sigma2)[:, None, None] * V / sqrt_d[:, :, None]
    gram = np.eye(V.shape[-1]) + np.einsum("mir,mis->mrs", v_tilde, v_tilde)
    return D, sqrt_d, v_tilde, gram


def _cholesky(gram: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(gram)):
        raise LinearAlgebraError("non-finite entries in the r x r core; inputs contain NaN or inf")
    try:
        return np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraError(f"r x r core is not SPD: {exc}") from exc


def _batched(H: LowRankPlusDiag, sigma2, *vectors):
    single = H.u.ndim == 1
    u = H.u[None] if single else H.u
    V = H.V[None] if single else H.V
    sig = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (u.shape[0],))
    rows = [np.asarray(v, dtype=np.float64).reshape(u.shape) for v in vectors]
    return single, u, V, sig, rows


def smw_quadratic(H: LowRankPlusDiag, sigma2, y: np.ndarray):
    """y^T (I + sigma2 * diag(u) + sigma2 * V V^T)^{-1} y via the Woodbury identity."""
    single, u, V, sig, (rows,) = _batched(H, sigma2, y)
    _, sqrt_d, v_tilde, gram = _whiten(u, V, sig)
    y_tilde = rows / sqrt_d
    quad = np.sum(y_tilde * y_tilde, axis=1)
    if V.shape[-1]:
        _cholesky(gram)
        b = np.einsum("mir,mi->mr", v_tilde, y_tilde)
        z = np.linalg.solve(gram, b[..., None])[..., 0]
        quad = quad - np.sum(b * z, axis=1)
    return float(quad[0]) if single else quad


def lowrank_logdet(H: LowRankPlusDiag, sigma2):
    """log det(I + sigma2 * diag(u) + sigma2 * V V^T) via the matrix determinant lemma."""
    single, u, V, sig, _ = _batched(H, sigma2)
    D, _, _, gram = _whiten(u, V, sig)
    logdet = np.sum(np.log(D), axis=1)
    if V.shape[-1]:
        chol = _cholesky(gram)
        logdet = logdet + 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=1)
    return float(logdet[0]) if single else logdet


def gaussian_nll(x_prev: np.ndarray, moments: TransitionMoments) -> float:
    """-log phi_d(x_prev; mu, Sigma) without the (d/2) log 2 pi constant."""
    d = moments.mu.shape[-1]
    resid = np.asarray(x_prev, dtype=np.float64) - moments.mu
    logdet = lowrank_logdet(moments.hessian, moments.sigma2)
    quad = smw_quadratic(moments.hessian, moments.sigma2, resid)
    return 0.5 * (d * math.log(moments.cov_scale) + logdet) + 0.5 * quad / moments.cov_scale


def transition_nll(x_prev: np.ndarray, x_cur: np.ndarray, s: int, t: int, model: ScoreHessianModel,
                   sched: NoiseSchedule) -> float:
    """Quasi negative log-likelihood of one reverse transition x_cur (time t) -> x_prev (time s)."""
    score, hessian = model.evaluate(sched, t, x_cur)
    moments = conditional_moments(score[0], hessian.row(0), sched, s, t, x_cur)
    return gaussian_nll(x_prev, moments)


# --- objectives ------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionSet:
    """All (s, t) transitions of a batch flattened to rows."""
    s: np.ndarray
    t: np.ndarray
    x_prev: np.ndarray
    x_cur: np.ndarray
    x0: np.ndarray
    n_paths: int

    def __len__(self) -> int:
        return self.s.size


def collect_transitions(batch: BatchLike) -> TransitionSet:
    """Flatten trajectories (each on its own grid) into transition rows."""
    if isinstance(batch, TrajectoryBatch):
        n, n_points, d = batch.states.shape
        if n == 0:
            raise InsufficientSamplesError("empty batch")
        N = n_points - 1
        return TransitionSet(
            s=batch.grids[:, :-1].ravel(),
            t=batch.grids[:, 1:].ravel(),
            x_prev=batch.states[:, :-1].reshape(n * N, d),
            x_cur=batch.states[:, 1:].reshape(n * N, d),
            x0=np.repeat(batch.states[:, 0], N, axis=0),
            n_paths=n,
        )
    paths = list(batch)
    if not paths:
        raise InsufficientSamplesError("empty batch")
    if len({p.dim for p in paths}) != 1:
        raise DimensionError("all trajectories in a batch must share d")
    return TransitionSet(
        s=np.concatenate([p.grid.points[:-1] for p in paths]),
        t=np.concatenate([p.grid.points[1:] for p in paths]),
        x_prev=np.concatenate([p.states[:-1] for p in paths]),
        x_cur=np.concatenate([p.states[1:] for p in paths]),
        x0=np.concatenate([np.repeat(p.states[:1], p.grid.N, axis=0) for p in paths]),
        n_paths=len(paths),
    )


class ObjectiveValue(NamedTuple):
    loss: float
    grad: np.ndarray
    barrier_count: int = 0


def _reduce(values: np.ndarray, strict: bool) -> float:
    return math.fsum(values.tolist()) if strict else float(np.sum(values))


def _lm_terms(score: np.ndarray, hessian: LowRankPlusDiag, m: np.ndarray, sigma2: np.ndarray,
              x_prev: np.ndarray, x_cur: np.ndarray, cfg: LmConfig, need_grad: bool):
    """Per-transition losses and cotangents w.r.t. (score, u, V).

    Rows whose whitened diagonal drops to eps_pos get the quadratic barrier
    barrier_weight * sum(max(0, eps_pos - D)^2) instead of the Gaussian term.
    """
    n_rows, d = x_cur.shape
    r = hessian.rank
    c = sigma2 / (m * m)
    mu = (x_cur + sigma2[:, None] * score) / m[:, None]
    resid = x_prev - mu

    D = 1.0 + sigma2[:, None] * hessian.u
    bad = np.any(D <= cfg.eps_pos, axis=1)
    violation = np.clip(cfg.eps_pos - D, 0.0, None)
    D_safe = np.where(bad[:, None], 1.0, D)
    V = np.where(bad[:, None, None], 0.0, hessian.V)
    sqrt_d = np.sqrt(D_safe)
    sigma = np.sqrt(sigma2)
    v_tilde = sigma[:, None, None] * V / sqrt_d[:, :, None]
    y_tilde = resid / sqrt_d

    quad = np.sum(y_tilde * y_tilde, axis=1)
    logdet = np.sum(np.log(D_safe), axis=1)
    if r:
        gram = np.eye(r) + np.einsum("mir,mis->mrs", v_tilde, v_tilde)
        chol = _cholesky(gram)
        b = np.einsum("mir,mi->mr", v_tilde, y_tilde)
        z = np.linalg.solve(gram, b[..., None])[..., 0]
        quad = quad - np.sum(b * z, axis=1)
        logdet = logdet + 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=1)

    losses = 0.5 * quad / c
    if cfg.include_logdet:
        losses = losses + 0.5 * (d * np.log(c) + logdet)
    losses = np.where(bad, cfg.barrier_weight * np.sum(violation * violation, axis=1), losses)
    if not need_grad:
        return losses, None, None, None, bad

    # w = A^{-1} resid with A = I + sigma2 * H
    w = y_tilde - np.einsum("mir,mr->mi", v_tilde, z) if r else y_tilde
    w = w / sqrt_d
    g_score = -m[:, None] * w
    logdet_on = 1.0 if cfg.include_logdet else 0.0

    if r:
        gram_inv = np.linalg.inv(gram)
        core_diag = np.einsum("mir,mrs,mis->mi", v_tilde, gram_inv, v_tilde)
    else:
        core_diag = 0.0
    a_inv_diag = (1.0 - core_diag) / D_safe
    g_u = 0.5 * sigma2[:, None] * (logdet_on * a_inv_diag - w * w / c[:, None])

    if r:
        a_inv_v = np.einsum("mir,mrs->mis", v_tilde, gram_inv) / (sqrt_d[:, :, None] * sigma[:, None, None])
        w_v = np.einsum("mi,mir->mr", w, V)
        g_V = sigma2[:, None, None] * (logdet_on * a_inv_v - w[:, :, None] * w_v[:, None, :] / c[:, None, None])
    else:
        g_V = np.zeros((n_rows, d, 0))

    if np.any(bad):
        g_score[bad] = 0.0
        g_V[bad] = 0.0
        g_u[bad] = (-2.0 * cfg.barrier_weight * violation * sigma2[:, None])[bad]
    return losses, g_score, g_u, g_V, bad


def _model_outputs(model, sched: NoiseSchedule, tr: TransitionSet, freeze_hessian: bool):
    cache = model.forward(sched, tr.t, tr.x_cur) if isinstance(model, MlpModel) else None
    if cache is not None:
        score, hessian = cache.score, cache.hessian
    else:
        score, hessian = model.evaluate(sched, tr.t, tr.x_cur)
    if freeze_hessian:
        hessian = LowRankPlusDiag.zeros(score.shape[0], score.shape[1])
    return cache, score, hessian


def _lm_value(tr: TransitionSet, model, sched: NoiseSchedule, cfg: LmConfig):
    _, score, hessian = _model_outputs(model, sched, tr, cfg.freeze_hessian)
    m, sigma2 = sched.factors(tr.s, tr.t)
    losses, _, _, _, bad = _lm_terms(score, hessian, m, sigma2, tr.x_prev, tr.x_cur, cfg, need_grad=False)
    return _reduce(losses, cfg.strict) / tr.n_paths, int(bad.sum())


def _sm_value(tr: TransitionSet, model, sched: NoiseSchedule, cfg: LmConfig, need_grad: bool = False):
    cache, score, _ = _model_outputs(model, sched, tr, freeze_hessian=True)
    m0, sigma2_0 = sched.marginal(tr.t)
    sigma0 = np.sqrt(sigma2_0)
    # cumulative noise of x_t given x_0; the conditional score is -eps / sigma(0, t)
    eps = (tr.x_cur - m0[:, None] * tr.x0) / sigma0[:, None]
    lam = sigma2_0 if cfg.sm_lambda == "sigma2" else np.ones_like(sigma2_0)
    resid = score + eps / sigma0[:, None]
    losses = 0.5 * lam * np.sum(resid * resid, axis=1)
    loss = _reduce(losses, cfg.strict) / len(tr)
    if not need_grad:
        return loss, cache, None
    return loss, cache, lam[:, None] * resid / len(tr)


def _theta_objective(value_fn, oracle: GaussianMixtureOracle, cfg: LmConfig) -> ObjectiveValue:
    """Objective value plus central-difference gradient over unconstrained theta."""
    theta = oracle.theta
    base = theta.to_unconstrained()
    loss, barrier = value_fn(oracle)
    grad = fd_gradient(lambda v: value_fn(GaussianMixtureOracle(theta.from_unconstrained(v)))[0],
                       base, rel_step=cfg.fd_rel_step)
    return ObjectiveValue(loss, grad, barrier)


def lm_objective(batch: BatchLike, model: ScoreHessianModel, sched: NoiseSchedule,
                 cfg: LmConfig) -> ObjectiveValue:
    """Mean over paths of the summed transition NLLs, each path on its own grid.

    Gradient is reverse-mode over phi for an MlpModel and central differences
    over unconstrained theta for a GaussianMixtureOracle; other models get an
    empty gradient.
    """
    tr = collect_transitions(batch)
    if isinstance(model, GaussianMixtureOracle):
        return _theta_objective(lambda mdl: _lm_value(tr, mdl, sched, cfg), model, cfg)

    cache, score, hessian = _model_outputs(model, sched, tr, cfg.freeze_hessian)
    m, sigma2 = sched.factors(tr.s, tr.t)
    need_grad = cache is not None
    losses, g_score, g_u, g_V, bad = _lm_terms(score, hessian, m, sigma2, tr.x_prev, tr.x_cur, cfg, need_grad)
    loss = _reduce(losses, cfg.strict) / tr.n_paths
    barrier_count = int(bad.sum())
    if barrier_count:
        debug.print(f"lm_objective: {barrier_count} transitions hit the positivity barrier")
    if not need_grad:
        return ObjectiveValue(loss, np.empty(0), barrier_count)

    scale = 1.0 / tr.n_paths
    if cfg.freeze_hessian:
        grad = model.backward(cache, g_score * scale)
    else:
        grad = model.backward(cache, g_score * scale, g_u * scale, g_V * scale)
    return ObjectiveValue(loss, grad, barrier_count)


def sm_objective(batch: BatchLike, model: ScoreHessianModel, sched: NoiseSchedule,
                 cfg: LmConfig) -> ObjectiveValue:
    """Denoising score matching over every (path, grid time) pair; the Hessian head is unused."""
    tr = collect_transitions(batch)
    if isinstance(model, GaussianMixtureOracle):
        return _theta_objective(lambda mdl: (_sm_value(tr, mdl, sched, cfg)[0], 0), model, cfg)
    loss, cache, g_score = _sm_value(tr, model, sched, cfg, need_grad=True)
    if cache is None:
        return ObjectiveValue(loss, np.empty(0), 0)
    return ObjectiveValue(loss, model.backward(cache, g_score), 0)
