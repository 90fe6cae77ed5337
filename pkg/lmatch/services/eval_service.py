"""
Evaluation metrics and numerical oracles: multi-bandwidth MMD, parameter-error
tables, conditional-moment verification and finite-difference derivatives.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import binomtest

from models.configs import MmdConfig
from models.records import MomentCheckReport, MomentProbe, ParamErrorRow
from services.likelihood_service import conditional_moments
from services.schedule_service import NoiseSchedule, make_rng
from services.score_model_service import MixtureParams, gm_hessian_lowrank, sample_mixture
from services.training_service import match_components
from utils.debug import debug
from utils.errors import DimensionError, FamilyError, InsufficientSamplesError
from utils.numdiff import fd_gradient, fd_hessian, fd_jacobian

logger = logging.getLogger(__name__)

__all__ = [
    "mmd", "mmd_squared", "mmd_permutation_test", "param_error_table", "verify_prop2",
    "fd_score_oracle", "fd_hessian_oracle", "fd_gradient", "fd_jacobian", "paired_sign_test",
]

KERNEL_TILE = 2048


# --- MMD ------------------------------------------------------------------------

def _kernel_sums(a: np.ndarray, b: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """sum_ij exp(-|a_i - b_j|^2 / (2 h^2)) per bandwidth, in row tiles."""
    totals = np.zeros(bandwidths.size)
    scale = -0.5 / bandwidths ** 2
    for start in range(0, a.shape[0], KERNEL_TILE):
        sq = cdist(a[start:start + KERNEL_TILE], b, "sqeuclidean")
        totals += np.array([np.exp(sq * k).sum() for k in scale])
    return totals


def _prepare(X: np.ndarray, Y: np.ndarray, cfg: MmdConfig):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    Y = Y[:, None] if Y.ndim == 1 else Y
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"sample dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    minimum = 2 if cfg.estimator == "unbiased_u" else 1
    if X.shape[0] < minimum or Y.shape[0] < minimum:
        raise InsufficientSamplesError(f"{cfg.estimator} MMD needs at least {minimum} samples per set")
    if cfg.standardize:
        pooled = np.concatenate([X, Y])
        std = pooled.std(axis=0)
        std[std == 0] = 1.0
        mean = pooled.mean(axis=0)
        X, Y = (X - mean) / std, (Y - mean) / std
    return X, Y


def _mmd2_per_bandwidth(X: np.ndarray, Y: np.ndarray, bandwidths: np.ndarray, estimator: str) -> np.ndarray:
    n, m = X.shape[0], Y.shape[0]
    kxx = _kernel_sums(X, X, bandwidths)
    kyy = _kernel_sums(Y, Y, bandwidths)
    kxy = _kernel_sums(X, Y, bandwidths)
    if estimator == "biased_v":
        return kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m)
    return (kxx - n) / (n * (n - 1)) + (kyy - m) / (m * (m - 1)) - 2.0 * kxy / (n * m)


def mmd_squared(X: np.ndarray, Y: np.ndarray, cfg: Optional[MmdConfig] = None) -> float:
    """MMD^2 averaged over bandwidths; the unbiased estimator may be negative."""
    cfg = cfg or MmdConfig()
    X, Y = _prepare(X, Y, cfg)
    values = _mmd2_per_bandwidth(X, Y, np.asarray(cfg.bandwidths, dtype=np.float64), cfg.estimator)
    return float(np.mean(values))


def mmd(X: np.ndarray, Y: np.ndarray, cfg: Optional[MmdConfig] = None) -> float:
    """sqrt(max(0, mean over bandwidths of MMD^2)) with k(x, y) = exp(-|x - y|^2 / (2 h^2))."""
    return float(np.sqrt(max(0.0, mmd_squared(X, Y, cfg))))


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    null_mean: float
    null_std: float
    p_value: float
    permutations: int


def mmd_permutation_test(X: np.ndarray, Y: np.ndarray, cfg: Optional[MmdConfig] = None,
                         permutations: int = 200, rng: Optional[np.random.Generator] = None) -> PermutationResult:
    """Two-sample test of X and Y with the MMD^2 statistic under label permutations."""
    cfg = cfg or MmdConfig()
    rng = rng or make_rng(0)
    X, Y = _prepare(X, Y, cfg)
    bandwidths = np.asarray(cfg.bandwidths, dtype=np.float64)
    statistic = float(np.mean(_mmd2_per_bandwidth(X, Y, bandwidths, cfg.estimator)))
    pooled = np.concatenate([X, Y])
    n = X.shape[0]
    null = np.empty(permutations)
    for i in range(permutations):
        order = rng.permutation(pooled.shape[0])
        null[i] = np.mean(_mmd2_per_bandwidth(pooled[order[:n]], pooled[order[n:]], bandwidths, cfg.estimator))
    p_value = (1.0 + np.count_nonzero(null >= statistic)) / (1.0 + permutations)
    null_std = float(null.std(ddof=1)) if permutations > 1 else 0.0
    return PermutationResult(statistic, float(null.mean()), null_std, float(p_value), permutations)


# --- parameter tables -----------------------------------------------------------

def param_error_table(replicates: Sequence[MixtureParams], truth: MixtureParams, method: str = "",
                      n: Optional[int] = None) -> List[ParamErrorRow]:
    """Per-parameter MAE and cross-replicate standard deviation (ddof = 1).

    Replicates are aligned to the truth by mean matching first. n is the
    sample size each replicate was fitted on; it defaults to the replicate count.
    """
    if len(replicates) < 2:
        raise InsufficientSamplesError("parameter error table needs at least 2 replicates")
    estimates = np.stack([match_components(theta, truth).param_vector() for theta in replicates])
    target = truth.param_vector()
    mae = np.mean(np.abs(estimates - target), axis=0)
    spread = np.std(estimates, axis=0, ddof=1)
    size = len(replicates) if n is None else n
    return [
        ParamErrorRow(param=name, MAE=float(mae[i]), std_error=float(spread[i]), n=size, method=method)
        for i, name in enumerate(truth.param_names())
    ]


# --- conditional moment verification --------------------------------------------

def _deviation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1.0, np.abs(b))


def _closed_form_moments(theta: MixtureParams, sched: NoiseSchedule, s: int, t: int, x: np.ndarray):
    score, hessian = gm_hessian_lowrank(theta, sched, t, x)
    moments = conditional_moments(score[0], hessian.row(0), sched, s, t, x)
    return moments.mu, moments.dense_covariance()


def _joint_normal_moments(theta: MixtureParams, sched: NoiseSchedule, s: int, t: int, x: np.ndarray):
    m0s, var0s = (float(v) for v in sched.marginal(s))
    m_st, var_st = (float(v) for v in sched.factors(s, t))
    mean_s = m0s * theta.means[0]
    v_s = m0s ** 2 * theta.scales[0] ** 2 + var0s
    v_t = m_st ** 2 * v_s + var_st
    mean = mean_s + (m_st * v_s / v_t) * (x - m_st * mean_s)
    cov = (v_s - (m_st * v_s) ** 2 / v_t) * np.eye(theta.dim)
    return mean, cov


def verify_prop2(theta: MixtureParams, sched: NoiseSchedule, s: int, t: int, probe_points: np.ndarray,
                 rng: Optional[np.random.Generator] = None, pairs: int = 1_000_000, window: float = 0.05,
                 tol: float = 1e-10, min_effective: float = 100.0) -> MomentCheckReport:
    """Compare closed-form conditional moments of X_s | X_t against an oracle.

    A single Gaussian is checked against joint-normal conditioning. Mixtures are
    checked against Monte Carlo moments of forward pairs weighted by a Gaussian
    window of width `window` around each probe; a probe passes when every entry
    lies within 3 standard errors plus window^2. Too few effective samples
    marks budget_ok False without raising.
    """
    if theta.family != "gaussian":
        raise FamilyError("conditional moment verification needs the gaussian family")
    probes = np.atleast_2d(np.asarray(probe_points, dtype=np.float64))
    if probes.shape[1] != theta.dim:
        raise DimensionError(f"probe dimension {probes.shape[1]} does not match mixture dimension {theta.dim}")

    results: List[MomentProbe] = []
    if theta.K == 1:
        for x in probes:
            mu, cov = _closed_form_moments(theta, sched, s, t, x)
            ref_mu, ref_cov = _joint_normal_moments(theta, sched, s, t, x)
            mean_dev = float(_deviation(mu, ref_mu).max())
            cov_dev = float(_deviation(cov, ref_cov).max())
            results.append(MomentProbe(point=x.tolist(), mean_deviation=mean_dev, cov_deviation=cov_dev,
                                      within_tolerance=mean_dev <= tol and cov_dev <= tol))
        method = "analytic"
        budget_ok = True
    else:
        rng = rng or make_rng(0)
        x0 = sample_mixture(theta, pairs, rng)
        m0s, var0s = (float(v) for v in sched.marginal(s))
        m_st, var_st = (float(v) for v in sched.factors(s, t))
        x_s = m0s * x0 + np.sqrt(var0s) * rng.standard_normal(x0.shape)
        x_t = m_st * x_s + np.sqrt(var_st) * rng.standard_normal(x0.shape)
        budget_ok = True
        for x in probes:
            mu, cov = _closed_form_moments(theta, sched, s, t, x)
            logw = -0.5 * np.sum((x_t - x) ** 2, axis=1) / window ** 2
            w = np.exp(logw - logw.max())
            w /= w.sum()
            ess = float(1.0 / np.sum(w * w))
            mc_mu = w @ x_s
            centred = x_s - mc_mu
            mc_cov = (w[:, None] * centred).T @ centred
            var = np.diag(mc_cov)
            mean_se = np.sqrt(var / ess)
            cov_se = np.sqrt((np.outer(var, var) + mc_cov ** 2) / ess)
            mean_gap = np.abs(mu - mc_mu)
            cov_gap = np.abs(cov - mc_cov)
            # kernel window bias is O(window^2)
            ok = bool(np.all(mean_gap <= 3 * mean_se + window ** 2) and np.all(cov_gap <= 3 * cov_se + window ** 2))
            budget_ok = budget_ok and ess >= min_effective
            results.append(MomentProbe(point=x.tolist(), mean_deviation=float(mean_gap.max()),
                                      cov_deviation=float(cov_gap.max()), mean_se=float(mean_se.max()),
                                      cov_se=float(cov_se.max()), effective_samples=ess, within_tolerance=ok))
        method = "monte_carlo"
        if not budget_ok:
            logger.warning(f"Monte Carlo budget too small at (s={s}, t={t}): fewer than {min_effective} effective samples")

    report = MomentCheckReport(
        s=s, t=t, method=method,
        max_mean_deviation=max(p.mean_deviation for p in results),
        max_cov_deviation=max(p.cov_deviation for p in results),
        passed=all(p.within_tolerance for p in results),
        budget_ok=budget_ok,
        probes=results,
    )
    debug.print(f"verify_prop2 s={s} t={t} {method}: mean dev {report.max_mean_deviation:.3g}, "
                f"cov dev {report.max_cov_deviation:.3g}")
    return report


# --- finite-difference oracles --------------------------------------------------

def fd_score_oracle(logdensity: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of a log-density with step h."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    return fd_gradient(logdensity, x, abs_step=h)


def fd_hessian_oracle(logdensity: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of a log-density with step h."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    return fd_hessian(logdensity, x, h)


# --- paired comparisons ---------------------------------------------------------

@dataclass(frozen=True)
class SignTestResult:
    wins: int
    losses: int
    ties: int
    p_value: float


def paired_sign_test(a: Sequence[float], b: Sequence[float]) -> SignTestResult:
    """One-sided sign test that a is smaller than b more often than not."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("paired samples must have the same length")
    wins = int(np.count_nonzero(a < b))
    losses = int(np.count_nonzero(a > b))
    ties = a.size - wins - losses
    if wins + losses == 0:
        return SignTestResult(wins, losses, ties, 1.0)
    p_value = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue
    return SignTestResult(wins, losses, ties, float(p_value))
