"""
Noise schedules, exact forward-process simulation and random time grids.

Time is discrete: grid times are integers in {0, ..., T} and the transition
factors between two grid times come from ratios of the cumulative product
alpha_bar, kept in log space so m^2 + sigma^2 = 1 holds to rounding.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from config import settings
from models.configs import ScheduleConfig
from models.records import TrajectoryRecord
from utils.debug import debug
from utils.errors import DimensionError, ScheduleError, TimeGridError

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("linear", "constant")


def make_rng(seed: int | Sequence[int] | np.random.SeedSequence) -> np.random.Generator:
    """Counter-based (Philox) random stream."""
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed: int | Sequence[int] | np.random.SeedSequence, count: int) -> List[np.random.Generator]:
    """Independent substreams derived from one master seed."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [make_rng(child) for child in root.spawn(count)]


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete variance-preserving schedule; beta[t - 1] holds beta_t for t = 1..T."""
    kind: str
    T: int
    beta: np.ndarray
    params: dict = field(default_factory=dict)
    log_alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        if beta.shape != (self.T,):
            raise ScheduleError(f"beta must have shape ({self.T},), got {beta.shape}")
        if not np.all((beta > 0.0) & (beta < 1.0)):
            raise ScheduleError("beta must lie strictly inside (0, 1)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        log_ab = np.concatenate([[0.0], np.cumsum(np.log1p(-beta))])
        log_ab.setflags(write=False)
        object.__setattr__(self, "log_alpha_bar", log_ab)

    @property
    def alpha_bar(self) -> np.ndarray:
        """alpha_bar[t - 1] = prod_{k <= t} (1 - beta_k)."""
        return np.exp(self.log_alpha_bar[1:])

    def _times(self, s, t, allow_equal: bool):
        s_arr = np.asarray(s)
        t_arr = np.asarray(t)
        if not (np.all(s_arr == np.round(s_arr)) and np.all(t_arr == np.round(t_arr))):
            raise ScheduleError("grid times must be integers")
        s_arr = s_arr.astype(np.int64)
        t_arr = t_arr.astype(np.int64)
        if np.any(s_arr < 0) or np.any(t_arr > self.T):
            raise ScheduleError(f"times must lie in [0, {self.T}]")
        bad = s_arr > t_arr if allow_equal else s_arr >= t_arr
        if np.any(bad):
            raise ScheduleError("transition factors require s < t")
        return s_arr, t_arr

    def factors(self, s, t, allow_equal: bool = False):
        """Vectorised (m(s,t), sigma2(s,t))."""
        s_arr, t_arr = self._times(s, t, allow_equal)
        delta = self.log_alpha_bar[t_arr] - self.log_alpha_bar[s_arr]
        return np.exp(0.5 * delta), -np.expm1(delta)

    def m_factor(self, s, t, allow_equal: bool = False) -> float:
        """m(s,t) = sqrt(alpha_bar[t] / alpha_bar[s])."""
        m, _ = self.factors(s, t, allow_equal)
        return float(m)

    def sigma2_factor(self, s, t, allow_equal: bool = False) -> float:
        """sigma2(s,t) = 1 - m(s,t)^2."""
        _, sigma2 = self.factors(s, t, allow_equal)
        return float(sigma2)

    def marginal(self, t):
        """(m(0,t), sigma2(0,t)), with t = 0 giving (1, 0)."""
        return self.factors(np.zeros_like(np.asarray(t)), t, allow_equal=True)

    def to_config(self) -> ScheduleConfig:
        """Serializable {kind, T, params} form."""
        return ScheduleConfig(kind=self.kind, T=self.T, params=dict(self.params))


def make_schedule(kind: str, T: int, **params: float) -> NoiseSchedule:
    """Build a linear (DDPM) or constant (beta = c / T) schedule."""
    if kind not in SCHEDULE_KINDS:
        raise ScheduleError(f"Unknown schedule kind '{kind}'. Allowed kinds: {', '.join(SCHEDULE_KINDS)}")
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T}")
    T = int(T)

    if kind == "linear":
        start = params.get("beta_start", settings.LINEAR_BETA_START)
        end = params.get("beta_end", settings.LINEAR_BETA_END)
        beta = np.linspace(start, end, T, dtype=np.float64)
        used = {"beta_start": float(start), "beta_end": float(end)}
    else:
        c = params.get("c", settings.CONSTANT_SCHEDULE_C)
        beta = np.full(T, c / T, dtype=np.float64)
        used = {"c": float(c)}

    if np.any(beta >= 1.0):
        message = f"{kind} schedule with T={T} produced beta >= 1; clipped to {settings.BETA_MAX}"
        warnings.warn(message, UserWarning, stacklevel=2)
        logger.warning(message)
        beta = np.minimum(beta, settings.BETA_MAX)
    if np.any(beta <= 0.0):
        raise ScheduleError("schedule parameters produce non-positive beta")

    debug.call("make_schedule", kind, T, **used)
    return NoiseSchedule(kind=kind, T=T, beta=beta, params=used)


def schedule_from_config(cfg: ScheduleConfig) -> NoiseSchedule:
    """Rebuild a schedule from its serialized spec."""
    return make_schedule(cfg.kind, cfg.T, **cfg.params)


def m_factor(sched: NoiseSchedule, s, t, allow_equal: bool = False) -> float:
    """Mean factor of the exact transition from s to t."""
    return sched.m_factor(s, t, allow_equal)


def sigma2_factor(sched: NoiseSchedule, s, t, allow_equal: bool = False) -> float:
    """Variance of the exact transition from s to t."""
    return sched.sigma2_factor(s, t, allow_equal)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing integer times from 0 to T."""
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points)
        if points.ndim != 1 or points.size < 2:
            raise TimeGridError("a time grid needs at least the two endpoints")
        if not np.all(points == np.round(points)):
            raise TimeGridError("grid times must be integers")
        points = points.astype(np.int64)
        if points[0] != 0:
            raise TimeGridError("grid must start at 0")
        if np.any(np.diff(points) <= 0):
            raise TimeGridError("grid must be strictly increasing")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def N(self) -> int:
        return self.points.size - 1

    @property
    def T(self) -> int:
        return int(self.points[-1])

    def check_schedule(self, sched: NoiseSchedule):
        """Raise unless the grid ends at the schedule horizon."""
        if self.T != sched.T:
            raise TimeGridError(f"grid ends at {self.T} but schedule has T={sched.T}")


def _interior_points(count: int, N: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted distinct interior times in {1..T-1}, one row per grid."""
    k = N - 1
    draws = np.floor(rng.uniform(0.0, T - 1, size=(count, k))).astype(np.int64) + 1
    draws.sort(axis=1)
    pending = np.flatnonzero(np.any(np.diff(draws, axis=1) == 0, axis=1)) if k > 1 else np.empty(0, int)
    attempts = 0
    while pending.size and attempts < settings.GRID_MAX_RESAMPLES:
        redraw = np.floor(rng.uniform(0.0, T - 1, size=(pending.size, k))).astype(np.int64) + 1
        redraw.sort(axis=1)
        draws[pending] = redraw
        pending = pending[np.any(np.diff(redraw, axis=1) == 0, axis=1)]
        attempts += 1
    for row in pending:
        draws[row] = np.sort(rng.choice(np.arange(1, T), size=k, replace=False))
    if attempts:
        debug.print(f"time grid collisions resolved after {attempts} resampling rounds")
    return draws


def sample_time_grids(count: int, N: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """`count` independent random grids as an integer array of shape (count, N + 1)."""
    if N < 1:
        raise TimeGridError(f"N must be at least 1, got {N}")
    if N - 1 > T - 1:
        raise TimeGridError(f"cannot place {N - 1} distinct interior times in (0, {T})")
    grids = np.empty((count, N + 1), dtype=np.int64)
    grids[:, 0] = 0
    grids[:, -1] = T
    if N > 1 and count:
        grids[:, 1:-1] = _interior_points(count, N, T, rng)
    return grids


def sample_time_grid(N: int, T: int, rng: np.random.Generator) -> TimeGrid:
    """One ordered grid with N - 1 uniform interior times."""
    return TimeGrid(sample_time_grids(1, N, T, rng)[0])


@dataclass(frozen=True)
class Trajectory:
    """One forward path: states[k] = m * states[k-1] + sigma * noises[k-1]."""
    grid: TimeGrid
    states: np.ndarray
    noises: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64)
        noises = np.array(self.noises, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] != self.grid.N + 1:
            raise DimensionError(f"states must have shape ({self.grid.N + 1}, d), got {states.shape}")
        if noises.shape != (self.grid.N, states.shape[1]):
            raise DimensionError(f"noises must have shape ({self.grid.N}, {states.shape[1]}), got {noises.shape}")
        states.setflags(write=False)
        noises.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "noises", noises)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def to_record(self) -> TrajectoryRecord:
        return TrajectoryRecord(
            dim=self.dim,
            grid=self.grid.points.tolist(),
            states=self.states.ravel().tolist(),
            noises=self.noises.ravel().tolist(),
            seed=self.seed,
        )

    @classmethod
    def from_record(cls, record: TrajectoryRecord) -> "Trajectory":
        grid = TimeGrid(np.asarray(record.grid))
        states = np.asarray(record.states, dtype=np.float64).reshape(grid.N + 1, record.dim)
        noises = np.asarray(record.noises, dtype=np.float64).reshape(grid.N, record.dim)
        return cls(grid=grid, states=states, noises=noises, seed=record.seed)


@dataclass(frozen=True)
class TrajectoryBatch:
    """n paths sharing N: grids (n, N+1), states (n, N+1, d), noises (n, N, d)."""
    grids: np.ndarray
    states: np.ndarray
    noises: np.ndarray

    def __len__(self) -> int:
        return self.grids.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(grid=TimeGrid(self.grids[i]), states=self.states[i], noises=self.noises[i])

    def trajectories(self) -> List[Trajectory]:
        return [self.trajectory(i) for i in range(len(self))]

    @classmethod
    def from_trajectories(cls, paths: Sequence[Trajectory]) -> "TrajectoryBatch":
        if not paths:
            raise DimensionError("cannot stack an empty list of trajectories")
        if len({p.grid.N for p in paths}) != 1 or len({p.dim for p in paths}) != 1:
            raise DimensionError("stacked trajectories must share N and d")
        return cls(
            grids=np.stack([p.grid.points for p in paths]),
            states=np.stack([p.states for p in paths]),
            noises=np.stack([p.noises for p in paths]),
        )


def forward_sample_batch(x0: np.ndarray, grids: np.ndarray, sched: NoiseSchedule,
                         rng: np.random.Generator) -> TrajectoryBatch:
    """Simulate the exact Gaussian transitions of n paths on their own grids."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    grids = np.asarray(grids, dtype=np.int64)
    if grids.ndim != 2 or grids.shape[0] != x0.shape[0]:
        raise DimensionError(f"need one grid per path: {grids.shape} grids for {x0.shape[0]} paths")
    if np.any(grids[:, 0] != 0) or np.any(grids[:, -1] != sched.T):
        raise TimeGridError(f"grids must run from 0 to T={sched.T}")

    n, d = x0.shape
    N = grids.shape[1] - 1
    noises = rng.standard_normal((n, N, d))
    states = np.empty((n, N + 1, d), dtype=np.float64)
    states[:, 0] = x0
    for k in range(1, N + 1):
        m, sigma2 = sched.factors(grids[:, k - 1], grids[:, k])
        states[:, k] = m[:, None] * states[:, k - 1] + np.sqrt(sigma2)[:, None] * noises[:, k - 1]
    return TrajectoryBatch(grids=grids, states=states, noises=noises)


def forward_sample(x0: np.ndarray, grid: TimeGrid, sched: NoiseSchedule,
                   rng: np.random.Generator, seed: Optional[int] = None) -> Trajectory:
    """Simulate one forward path on `grid` starting at x0."""
    grid.check_schedule(sched)
    batch = forward_sample_batch(np.asarray(x0, dtype=np.float64)[None, :], grid.points[None, :], sched, rng)
    return Trajectory(grid=grid, states=batch.states[0], noises=batch.noises[0], seed=seed)
