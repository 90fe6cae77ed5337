import warnings

import numpy as np
import pytest

from models.configs import ScheduleConfig
from services.schedule_service import (
    TimeGrid,
    Trajectory,
    TrajectoryBatch,
    forward_sample,
    forward_sample_batch,
    m_factor,
    make_rng,
    make_schedule,
    sample_time_grid,
    sample_time_grids,
    schedule_from_config,
    sigma2_factor,
    spawn_rngs,
)
from utils.errors import DimensionError, ScheduleError, TimeGridError


class ZeroStream:
    """Random stream whose normals are all zero."""

    def standard_normal(self, size):
        return np.zeros(size)


class TestMakeSchedule:
    def test_linear_endpoints(self, linear_schedule):
        assert linear_schedule.beta[0] == pytest.approx(1e-4)
        assert linear_schedule.beta[-1] == pytest.approx(2e-2)
        assert linear_schedule.beta[499] == pytest.approx(1e-4 + 499 * (2e-2 - 1e-4) / 999, rel=1e-12)
        assert linear_schedule.beta[499] == pytest.approx(1.005e-2, rel=1e-3)

    def test_constant_alpha_bar(self):
        sched = make_schedule("constant", 10, c=0.1)
        assert sched.alpha_bar[-1] == pytest.approx(0.99 ** 10, rel=1e-12)
        assert sched.alpha_bar[-1] == pytest.approx(0.90438, abs=1e-5)

    def test_constant_clipping_warns(self):
        with pytest.warns(UserWarning, match="clipped"):
            sched = make_schedule("constant", 1, c=1.0)
        assert sched.beta[0] == pytest.approx(0.999)

    def test_alpha_bar_strictly_decreasing(self, linear_schedule):
        assert np.all(np.diff(linear_schedule.alpha_bar) < 0)

    @pytest.mark.parametrize("kind, T", [("cosine", 10), ("linear", 0), ("linear", 2.5)])
    def test_invalid_requests(self, kind, T):
        with pytest.raises(ScheduleError):
            make_schedule(kind, T)

    def test_config_round_trip(self):
        sched = make_schedule("constant", 20, c=0.5)
        config = sched.to_config()
        assert config == ScheduleConfig(kind="constant", T=20, params={"c": 0.5})
        np.testing.assert_array_equal(schedule_from_config(config).beta, sched.beta)


class TestFactors:
    def test_constant_schedule_m(self):
        sched = make_schedule("constant", 1000, c=1.0)
        m = m_factor(sched, 0, 1000)
        assert m == pytest.approx(0.999 ** 500, rel=1e-10)
        assert m == pytest.approx(0.60638, abs=1e-5)
        assert sigma2_factor(sched, 0, 1000) == pytest.approx(0.63230, abs=1e-5)

    def test_first_step_variance_is_beta(self, linear_schedule):
        assert sigma2_factor(linear_schedule, 0, 1) == pytest.approx(1e-4, rel=1e-12)

    def test_variance_preserving_and_telescoping(self, linear_schedule, rng):
        r, s, t = np.sort(rng.choice(1001, size=(3, 5000), replace=True), axis=0)
        keep = (r < s) & (s < t)
        r, s, t = r[keep], s[keep], t[keep]
        m_rt, v_rt = linear_schedule.factors(r, t)
        m_rs, v_rs = linear_schedule.factors(r, s)
        m_st, v_st = linear_schedule.factors(s, t)
        np.testing.assert_allclose(m_rt ** 2 + v_rt, 1.0, atol=1e-12)
        np.testing.assert_allclose(m_rs * m_st, m_rt, atol=1e-12)
        np.testing.assert_allclose(v_st + m_st ** 2 * v_rs, v_rt, atol=1e-12)

    def test_composition(self, linear_schedule):
        assert m_factor(linear_schedule, 0, 5) * m_factor(linear_schedule, 5, 9) == pytest.approx(
            m_factor(linear_schedule, 0, 9), abs=1e-14)

    def test_equal_times_need_diagnostic_mode(self, linear_schedule):
        with pytest.raises(ScheduleError):
            m_factor(linear_schedule, 7, 7)
        assert m_factor(linear_schedule, 7, 7, allow_equal=True) == 1.0

    def test_marginal_at_zero(self, linear_schedule):
        m, sigma2 = linear_schedule.marginal(0)
        assert float(m) == 1.0 and float(sigma2) == 0.0

    @pytest.mark.parametrize("s, t", [(5, 3), (-1, 4), (0, 1001), (0.5, 3)])
    def test_invalid_pairs(self, linear_schedule, s, t):
        with pytest.raises(ScheduleError):
            linear_schedule.factors(s, t)


class TestTimeGrids:
    def test_single_transition_grid(self, rng):
        grid = sample_time_grid(1, 1000, rng)
        np.testing.assert_array_equal(grid.points, [0, 1000])

    def test_interior_uniform_mean(self, rng):
        interior = sample_time_grids(100_000, 2, 1000, rng)[:, 1]
        assert interior.min() >= 1 and interior.max() <= 999
        assert abs(interior.mean() - 500.0) < 3 * 288.7 / np.sqrt(100_000)

    def test_sorted_and_distinct(self, rng):
        grids = sample_time_grids(5000, 8, 20, rng)
        assert np.all(np.diff(grids, axis=1) > 0)
        assert np.all(grids[:, 0] == 0) and np.all(grids[:, -1] == 20)

    def test_dense_grid_fills_every_time(self, rng):
        grids = sample_time_grids(10, 10, 10, rng)
        np.testing.assert_array_equal(grids, np.tile(np.arange(11), (10, 1)))

    def test_too_many_points(self, rng):
        with pytest.raises(TimeGridError):
            sample_time_grid(12, 10, rng)

    @pytest.mark.parametrize("points", [[1, 5, 10], [0, 5, 5, 10], [0], [0, 2.5, 10]])
    def test_malformed_grid(self, points):
        with pytest.raises(TimeGridError):
            TimeGrid(np.asarray(points))


class TestForwardSampling:
    def test_zero_stream_keeps_zero(self, linear_schedule):
        grid = TimeGrid(np.array([0, 10, 500, 1000]))
        path = forward_sample(np.zeros(2), grid, linear_schedule, ZeroStream())
        np.testing.assert_array_equal(path.states, np.zeros((4, 2)))

    def test_reconstruction_identity(self, linear_schedule, rng):
        grid = sample_time_grid(6, 1000, rng)
        path = forward_sample(np.array([1.0, -2.0]), grid, linear_schedule, rng)
        for k in range(1, grid.N + 1):
            m, sigma2 = linear_schedule.factors(grid.points[k - 1], grid.points[k])
            np.testing.assert_array_equal(path.states[k], m * path.states[k - 1] + np.sqrt(sigma2) * path.noises[k - 1])

    def test_terminal_marginal(self, linear_schedule, rng):
        n = 100_000
        x0 = np.tile([1.0, 0.0], (n, 1))
        grids = sample_time_grids(n, 3, 1000, rng)
        batch = forward_sample_batch(x0, grids, linear_schedule, rng)
        m, sigma2 = linear_schedule.marginal(1000)
        bound = 3 * np.sqrt(sigma2) / np.sqrt(n)
        np.testing.assert_array_less(np.abs(batch.states[:, -1].mean(axis=0) - m * np.array([1.0, 0.0])), bound)

    def test_composed_variance(self, linear_schedule):
        grid = TimeGrid(np.array([0, 200, 1000]))
        m1, v1 = linear_schedule.factors(0, 200)
        m2, v2 = linear_schedule.factors(200, 1000)
        _, total = linear_schedule.marginal(1000)
        assert v2 + m2 ** 2 * v1 == pytest.approx(float(total), abs=1e-12)
        assert grid.N == 2

    def test_grid_must_match_schedule(self, linear_schedule, rng):
        with pytest.raises(TimeGridError):
            forward_sample(np.zeros(1), TimeGrid(np.array([0, 500])), linear_schedule, rng)

    def test_batch_round_trip(self, linear_schedule, rng):
        grids = sample_time_grids(4, 3, 1000, rng)
        batch = forward_sample_batch(rng.standard_normal((4, 2)), grids, linear_schedule, rng)
        rebuilt = TrajectoryBatch.from_trajectories(batch.trajectories())
        np.testing.assert_array_equal(rebuilt.states, batch.states)
        record = batch.trajectory(2).to_record()
        np.testing.assert_array_equal(Trajectory.from_record(record).noises, batch.noises[2])

    def test_batch_needs_one_grid_per_path(self, linear_schedule, rng):
        with pytest.raises(DimensionError):
            forward_sample_batch(np.zeros((3, 1)), sample_time_grids(2, 2, 1000, rng), linear_schedule, rng)


class TestRandomStreams:
    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(make_rng(5).standard_normal(4), make_rng(5).standard_normal(4))

    def test_spawned_streams_differ(self):
        a, b = spawn_rngs(5, 2)
        assert not np.array_equal(a.standard_normal(4), b.standard_normal(4))

    def test_no_warning_for_valid_schedule(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            make_schedule("linear", 100)
