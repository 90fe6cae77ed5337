"""
Score/Hessian models: the analytic diffused-mixture oracle (theta) and a
one-hidden-layer MLP (phi) with a low-rank-plus-diagonal Hessian head.

Every model maps (t, x) to a score vector and a LowRankPlusDiag Hessian,
batched over rows of x.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol, Tuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from config import settings
from models.configs import MixtureSpec, ScheduleConfig
from models.records import CheckpointRecord
from services.schedule_service import NoiseSchedule, make_rng
from utils.errors import DimensionError, FamilyError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LowRankPlusDiag:
    """H = diag(u) + V V^T, batched over leading axes: u (..., d), V (..., d, r)."""
    u: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        V = np.asarray(self.V, dtype=np.float64)
        if V.shape[:-1] != u.shape:
            raise DimensionError(f"V shape {V.shape} does not match u shape {u.shape}")
        if V.shape[-1] > u.shape[-1]:
            raise DimensionError(f"rank {V.shape[-1]} exceeds dimension {u.shape[-1]}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "V", V)

    @property
    def dim(self) -> int:
        return self.u.shape[-1]

    @property
    def rank(self) -> int:
        return self.V.shape[-1]

    def dense(self) -> np.ndarray:
        """Materialise diag(u) + V V^T; diagnostics and tests only."""
        eye = np.eye(self.dim)
        return self.u[..., :, None] * eye + np.einsum("...ik,...jk->...ij", self.V, self.V)

    def row(self, i: int) -> "LowRankPlusDiag":
        return LowRankPlusDiag(self.u[i], self.V[i])

    @classmethod
    def zeros(cls, batch: int, dim: int, rank: int = 0) -> "LowRankPlusDiag":
        return cls(np.zeros((batch, dim)), np.zeros((batch, dim, rank)))


class ScoreHessianModel(Protocol):
    """Anything mapping (t, x) to a score and a low-rank-plus-diagonal Hessian."""

    @property
    def dim(self) -> int: ...

    def evaluate(self, sched: NoiseSchedule, t, x: np.ndarray) -> Tuple[np.ndarray, LowRankPlusDiag]: ...


def _as_batch(t, x: np.ndarray, dim: Optional[int] = None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"x must be a vector or a matrix of rows, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise DimensionError(f"model dimension {dim} does not match input dimension {x.shape[1]}")
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    return t, x


# --- mixture parameters ---------------------------------------------------------

@dataclass(frozen=True)
class MixtureParams:
    """Isotropic Gaussian or Student-t mixture: weights (K,), means (K, d), scales (K,)."""
    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    family: str = "gaussian"
    df: Optional[float] = None

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        scales = np.asarray(self.scales, dtype=np.float64).ravel()
        if means.shape[0] != weights.size or scales.size != weights.size:
            raise DimensionError("weights, means and scales disagree on the number of components")
        if np.any(weights <= 0) or np.any(weights > 1) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must lie in (0, 1] and sum to 1")
        if np.any(scales <= 0):
            raise ValueError("mixture scales must be positive")
        if self.family not in ("gaussian", "student_t"):
            raise FamilyError(f"Unknown mixture family '{self.family}'")
        if self.family == "student_t" and (self.df is None or self.df <= 0):
            raise FamilyError("student_t family requires positive df")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_spec(cls, spec: MixtureSpec) -> "MixtureParams":
        return cls(spec.weights, spec.means, spec.scales, spec.family, spec.df)

    def to_spec(self) -> MixtureSpec:
        return MixtureSpec(
            weights=self.weights.tolist(),
            means=self.means.tolist(),
            scales=self.scales.tolist(),
            family=self.family,
            df=self.df,
        )

    def to_unconstrained(self) -> np.ndarray:
        """[K-1 weight logits relative to the last component, means, log scales]."""
        logits = np.log(self.weights[:-1]) - np.log(self.weights[-1])
        return np.concatenate([logits, self.means.ravel(), np.log(self.scales)])

    def from_unconstrained(self, vector: np.ndarray) -> "MixtureParams":
        """Inverse of to_unconstrained, keeping K, d and the family of self."""
        K, d = self.K, self.dim
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != (K - 1) + K * d + K:
            raise DimensionError(f"expected {(K - 1) + K * d + K} unconstrained values, got {vector.size}")
        weights = softmax(np.concatenate([vector[:K - 1], [0.0]]))
        means = vector[K - 1:K - 1 + K * d].reshape(K, d)
        scales = np.exp(vector[K - 1 + K * d:])
        return MixtureParams(weights, means, scales, self.family, self.df)

    def permuted(self, order) -> "MixtureParams":
        order = np.asarray(order)
        return MixtureParams(self.weights[order], self.means[order], self.scales[order], self.family, self.df)

    def param_names(self) -> List[str]:
        """Table names: mu{k}{j}, sigma{k}, omega{k} (last weight is implied)."""
        names = [f"mu{k + 1}{j + 1}" for k in range(self.K) for j in range(self.dim)]
        names += [f"sigma{k + 1}" for k in range(self.K)]
        names += [f"omega{k + 1}" for k in range(self.K - 1)]
        return names

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.means.ravel(), self.scales, self.weights[:-1]])

    @classmethod
    def from_param_vector(cls, vector, K: int, dim: int, family: str = "gaussian",
                          df: Optional[float] = None) -> "MixtureParams":
        """Inverse of param_vector; the last weight is 1 minus the others."""
        vector = np.asarray(vector, dtype=np.float64).ravel()
        if vector.size != K * dim + K + K - 1:
            raise DimensionError(f"expected {K * dim + 2 * K - 1} table values, got {vector.size}")
        means = vector[:K * dim].reshape(K, dim)
        scales = vector[K * dim:K * dim + K]
        head = vector[K * dim + K:]
        return cls(np.append(head, 1.0 - head.sum()), means, scales, family, df)


def sample_mixture(theta: MixtureParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n rows from the mixture (Gaussian or Student-t components)."""
    labels = rng.choice(theta.K, size=n, p=theta.weights)
    if theta.family == "gaussian":
        noise = rng.standard_normal((n, theta.dim))
    else:
        noise = rng.standard_t(theta.df, size=(n, theta.dim))
    return theta.means[labels] + theta.scales[labels, None] * noise


# --- analytic oracle ------------------------------------------------------------

def _diffused_components(theta: MixtureParams, sched: NoiseSchedule, t, x: np.ndarray):
    """Component log-weights, per-component gradients g_k and variances v_k of the diffused mixture."""
    if theta.family != "gaussian":
        raise FamilyError("closed-form diffused score is only available for the gaussian family")
    t, x = _as_batch(t, x, theta.dim)
    m, sigma2 = sched.marginal(t)
    v = m[:, None] ** 2 * theta.scales[None, :] ** 2 + sigma2[:, None]
    diff = m[:, None, None] * theta.means[None, :, :] - x[:, None, :]
    sq = np.einsum("nkd,nkd->nk", diff, diff)
    logits = np.log(theta.weights)[None, :] - 0.5 * theta.dim * np.log(2 * np.pi * v) - 0.5 * sq / v
    return logits, diff / v[:, :, None], v


def gm_logdensity(theta: MixtureParams, sched: NoiseSchedule, t, x: np.ndarray) -> np.ndarray:
    """log q_t(x; theta), one value per row of x."""
    logits, _, _ = _diffused_components(theta, sched, t, x)
    return logsumexp(logits, axis=1)


def gm_score_batch(theta: MixtureParams, sched: NoiseSchedule, t, x: np.ndarray) -> np.ndarray:
    """Rows of grad log q_t(x; theta)."""
    logits, g, _ = _diffused_components(theta, sched, t, x)
    resp = softmax(logits, axis=1)
    return np.einsum("nk,nkd->nd", resp, g)


def gm_hessian_lowrank(theta: MixtureParams, sched: NoiseSchedule, t, x: np.ndarray):
    """Score and Hessian of log q_t, the Hessian in diag + V V^T form with rank <= d."""
    logits, g, v = _diffused_components(theta, sched, t, x)
    resp = softmax(logits, axis=1)
    score = np.einsum("nk,nkd->nd", resp, g)
    u = np.repeat(-np.sum(resp / v, axis=1, keepdims=True), theta.dim, axis=1)
    # sum_k w_k g_k g_k^T - g g^T is the responsibility-weighted covariance of the g_k
    factor = np.sqrt(resp)[:, None, :] * np.swapaxes(g - score[:, None, :], 1, 2)
    if theta.K > theta.dim:
        evals, evecs = np.linalg.eigh(np.einsum("nik,njk->nij", factor, factor))
        factor = evecs * np.sqrt(np.clip(evals, 0.0, None))[:, None, :]
    return score, LowRankPlusDiag(u, factor)


def gm_score(theta: MixtureParams, sched: NoiseSchedule, t, x: np.ndarray) -> np.ndarray:
    """grad log q_t(x; theta) at a single point."""
    return gm_score_batch(theta, sched, t, x)[0]


def gm_hessian(theta: MixtureParams, sched: NoiseSchedule, t, x: np.ndarray) -> np.ndarray:
    """Dense d x d Hessian of log q_t(x; theta) at a single point."""
    _, hessian = gm_hessian_lowrank(theta, sched, t, x)
    return hessian.dense()[0]


@dataclass(frozen=True)
class GaussianMixtureOracle:
    """Analytic score and Hessian of a diffused Gaussian mixture."""
    theta: MixtureParams

    @property
    def dim(self) -> int:
        return self.theta.dim

    def evaluate(self, sched: NoiseSchedule, t, x: np.ndarray):
        return gm_hessian_lowrank(self.theta, sched, t, x)

    def to_record(self, schedule: ScheduleConfig) -> CheckpointRecord:
        return CheckpointRecord(kind="mixture_oracle", dim=self.dim, schedule=schedule, mixture=self.theta.to_spec())


@dataclass(frozen=True)
class ScoreOnlyModel:
    """Wraps a model and replaces its Hessian by zero (the H = 0 baseline)."""
    base: ScoreHessianModel

    @property
    def dim(self) -> int:
        return self.base.dim

    def evaluate(self, sched: NoiseSchedule, t, x: np.ndarray):
        score, _ = self.base.evaluate(sched, t, x)
        return score, LowRankPlusDiag.zeros(score.shape[0], score.shape[1])


# --- MLP ------------------------------------------------------------------------

def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


@dataclass(frozen=True)
class MlpForward:
    """Outputs of a batched forward pass plus the activations reverse mode needs."""
    score: np.ndarray
    hessian: LowRankPlusDiag
    features: np.ndarray
    pre: np.ndarray
    gate: np.ndarray
    hidden: np.ndarray
    raw_u: np.ndarray


@dataclass(frozen=True)
class MlpModel:
    """Input (x, t/T) -> SiLU hidden layer -> [score (d), diagonal head (d), factor (d*r)].

    The diagonal head is u = -softplus(raw), so u < 0 and the zero network gives
    u = -log 2. Covariance positivity is not enforced here.
    """
    phi: np.ndarray
    dim: int
    width: int = settings.DEFAULT_WIDTH
    rank: int = settings.DEFAULT_RANK
    seed: Optional[int] = None
    activation: str = "silu"

    def __post_init__(self):
        if self.rank > self.dim:
            raise DimensionError(f"rank {self.rank} exceeds dimension {self.dim}")
        if self.activation != "silu":
            raise ValueError(f"Unsupported activation '{self.activation}'")
        phi = np.array(self.phi, dtype=np.float64).ravel()
        expected = self.parameter_count(self.dim, self.width, self.rank)
        if phi.size != expected:
            raise DimensionError(f"phi has {phi.size} entries, architecture needs {expected}")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @staticmethod
    def output_size(dim: int, rank: int) -> int:
        return 2 * dim + dim * rank

    @staticmethod
    def parameter_count(dim: int, width: int, rank: int) -> int:
        return (dim + 2) * width + (width + 1) * MlpModel.output_size(dim, rank)

    @classmethod
    def initialize(cls, dim: int, width: int = settings.DEFAULT_WIDTH, rank: int = settings.DEFAULT_RANK,
                   seed: int = 0) -> "MlpModel":
        """Scaled-normal fan-in initialisation, zero biases."""
        rng = make_rng(seed)
        out = cls.output_size(dim, rank)
        w1 = rng.standard_normal((width, dim + 1)) / np.sqrt(dim + 1)
        w2 = rng.standard_normal((out, width)) / np.sqrt(width)
        phi = np.concatenate([w1.ravel(), np.zeros(width), w2.ravel(), np.zeros(out)])
        return cls(phi=phi, dim=dim, width=width, rank=rank, seed=seed)

    def with_params(self, phi: np.ndarray) -> "MlpModel":
        return MlpModel(phi=phi, dim=self.dim, width=self.width, rank=self.rank, seed=self.seed,
                        activation=self.activation)

    def unpack(self):
        """Views (W1, b1, W2, b2) into phi."""
        d, h = self.dim, self.width
        out = self.output_size(d, self.rank)
        i1 = h * (d + 1)
        i2 = i1 + h
        i3 = i2 + out * h
        phi = self.phi
        return phi[:i1].reshape(h, d + 1), phi[i1:i2], phi[i2:i3].reshape(out, h), phi[i3:]

    def forward(self, sched: NoiseSchedule, t, x: np.ndarray) -> MlpForward:
        t, x = _as_batch(t, x, self.dim)
        w1, b1, w2, b2 = self.unpack()
        d, r = self.dim, self.rank
        features = np.concatenate([x, (t.astype(np.float64) / sched.T)[:, None]], axis=1)
        pre = features @ w1.T + b1
        gate = expit(pre)
        hidden = pre * gate
        out = hidden @ w2.T + b2
        raw_u = out[:, d:2 * d]
        hessian = LowRankPlusDiag(-_softplus(raw_u), out[:, 2 * d:].reshape(-1, d, r))
        return MlpForward(out[:, :d], hessian, features, pre, gate, hidden, raw_u)

    def evaluate(self, sched: NoiseSchedule, t, x: np.ndarray):
        result = self.forward(sched, t, x)
        return result.score, result.hessian

    def backward(self, cache: MlpForward, g_score: np.ndarray, g_u: Optional[np.ndarray] = None,
                 g_V: Optional[np.ndarray] = None) -> np.ndarray:
        """Reverse-mode gradient over phi of sum(g_score*score + g_u*u + g_V*V)."""
        n, d, r = cache.score.shape[0], self.dim, self.rank
        g_score = np.asarray(g_score, dtype=np.float64).reshape(n, d)
        g_u = np.zeros((n, d)) if g_u is None else np.asarray(g_u, dtype=np.float64).reshape(n, d)
        g_V = np.zeros((n, d, r)) if g_V is None else np.asarray(g_V, dtype=np.float64).reshape(n, d, r)
        _, _, w2, _ = self.unpack()

        g_out = np.concatenate([g_score, -g_u * expit(cache.raw_u), g_V.reshape(n, d * r)], axis=1)
        g_w2 = g_out.T @ cache.hidden
        g_b2 = g_out.sum(axis=0)
        g_hidden = g_out @ w2
        g_pre = g_hidden * (cache.gate + cache.pre * cache.gate * (1.0 - cache.gate))
        g_w1 = g_pre.T @ cache.features
        g_b1 = g_pre.sum(axis=0)
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])

    def to_record(self, schedule: ScheduleConfig, config_hash: Optional[str] = None) -> CheckpointRecord:
        return CheckpointRecord(
            kind="mlp", dim=self.dim, schedule=schedule, width=self.width, rank=self.rank,
            activation=self.activation, seed=self.seed, phi=self.phi.tolist(), config_hash=config_hash,
        )


def mlp_eval(model: MlpModel, sched: NoiseSchedule, t, x: np.ndarray) -> Tuple[np.ndarray, LowRankPlusDiag]:
    """Score and Hessian factors of the MLP at a single (t, x)."""
    score, hessian = model.evaluate(sched, t, x)
    return score[0], hessian.row(0)


def mlp_param_gradient(model: MlpModel, sched: NoiseSchedule, t, x: np.ndarray, upstream) -> np.ndarray:
    """Gradient over phi of <upstream, (score, u, V)> at a single (t, x)."""
    g_score, g_u, g_V = upstream
    d, r = model.dim, model.rank
    if np.shape(g_score) != (d,) or np.shape(g_u) != (d,) or np.shape(g_V) != (d, r):
        raise DimensionError("upstream cotangents must have shapes (d,), (d,), (d, r)")
    cache = model.forward(sched, t, x)
    return model.backward(cache, g_score, g_u, g_V)


def model_from_record(record: CheckpointRecord) -> ScoreHessianModel:
    """Rebuild an MLP or oracle model from a checkpoint record."""
    if record.kind == "mlp":
        if record.phi is None or record.width is None or record.rank is None:
            raise ValueError("mlp checkpoint is missing phi, width or rank")
        return MlpModel(phi=np.asarray(record.phi), dim=record.dim, width=record.width, rank=record.rank,
                        seed=record.seed, activation=record.activation or "silu")
    if record.mixture is None:
        raise ValueError("mixture_oracle checkpoint is missing the mixture")
    theta = MixtureParams.from_spec(record.mixture)
    if theta.dim != record.dim:
        raise DimensionError(f"checkpoint dim {record.dim} disagrees with mixture dimension {theta.dim}")
    return GaussianMixtureOracle(theta)
