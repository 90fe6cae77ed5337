import numpy as np

from services.score_model_service import LowRankPlusDiag


def random_lowrank(rng: np.random.Generator, d: int, r: int, batch=None) -> LowRankPlusDiag:
    """diag(u) + V V^T with u in (-1.5, 1), so 1 + 0.5 * u stays positive."""
    shape = () if batch is None else (batch,)
    return LowRankPlusDiag(rng.uniform(-1.5, 1.0, shape + (d,)), 0.5 * rng.standard_normal(shape + (d, r)))


def dense_covariance(H: LowRankPlusDiag, sigma2: float, c: float) -> np.ndarray:
    return c * (np.eye(H.dim) + sigma2 * H.dense())
