import math

import numpy as np
import pytest

from services.schedule_service import make_schedule
from services.score_model_service import (
    GaussianMixtureOracle,
    LowRankPlusDiag,
    MixtureParams,
    MlpModel,
    ScoreOnlyModel,
    gm_hessian,
    gm_hessian_lowrank,
    gm_logdensity,
    gm_score,
    gm_score_batch,
    mlp_eval,
    mlp_param_gradient,
    model_from_record,
    sample_mixture,
)
from utils.errors import DimensionError, FamilyError
from utils.numdiff import fd_gradient, fd_jacobian


def _contract(model, sched, t, x, upstream):
    g_score, g_u, g_V = upstream
    score, hessian = model.evaluate(sched, t, x)
    return float(np.sum(g_score * score) + np.sum(g_u * hessian.u) + np.sum(g_V * hessian.V))


class TestMixtureParams:
    def test_unconstrained_round_trip(self, paramest_truth):
        rebuilt = paramest_truth.from_unconstrained(paramest_truth.to_unconstrained())
        np.testing.assert_allclose(rebuilt.weights, paramest_truth.weights, rtol=1e-12)
        np.testing.assert_allclose(rebuilt.means, paramest_truth.means, rtol=1e-12)
        np.testing.assert_allclose(rebuilt.scales, paramest_truth.scales, rtol=1e-12)

    def test_table_vector(self, paramest_truth):
        assert paramest_truth.param_names() == ["mu11", "mu12", "mu21", "mu22", "sigma1", "sigma2", "omega1"]
        vector = paramest_truth.param_vector()
        np.testing.assert_allclose(vector, [1, 2, -1, -3, math.sqrt(0.3), math.sqrt(0.6), 1 / 3])
        rebuilt = MixtureParams.from_param_vector(vector, 2, 2)
        np.testing.assert_allclose(rebuilt.weights, [1 / 3, 2 / 3])

    @pytest.mark.parametrize("weights, scales", [([0.5, 0.6], [1, 1]), ([0.5, 0.5], [1, 0])])
    def test_invalid_parameters(self, weights, scales):
        with pytest.raises(ValueError):
            MixtureParams(weights, [[0.0], [1.0]], scales)

    def test_student_t_requires_df(self):
        with pytest.raises(FamilyError):
            MixtureParams([1.0], [[0.0]], [1.0], family="student_t")

    def test_permuted(self, paramest_truth):
        swapped = paramest_truth.permuted([1, 0])
        np.testing.assert_array_equal(swapped.means[0], paramest_truth.means[1])

    def test_sample_moments(self, paramest_truth, rng):
        data = sample_mixture(paramest_truth, 200_000, rng)
        expected = paramest_truth.weights @ paramest_truth.means
        np.testing.assert_allclose(data.mean(axis=0), expected, atol=0.02)


class TestMixtureOracle:
    def test_standard_normal_is_stationary(self, linear_schedule, standard_normal_2d, rng):
        x = rng.standard_normal((10, 2))
        for t in (1, 300, 1000):
            score, hessian = gm_hessian_lowrank(standard_normal_2d, linear_schedule, t, x)
            np.testing.assert_allclose(score, -x, atol=1e-12)
            np.testing.assert_allclose(hessian.dense(), np.broadcast_to(-np.eye(2), (10, 2, 2)), atol=1e-12)

    @pytest.mark.parametrize("t", [1, 250, 800])
    def test_score_matches_finite_differences(self, linear_schedule, paramest_truth, t):
        x = np.array([0.3, -0.7])
        numeric = fd_gradient(lambda z: gm_logdensity(paramest_truth, linear_schedule, t, z)[0], x,
                              abs_step=1e-5)
        np.testing.assert_allclose(gm_score(paramest_truth, linear_schedule, t, x), numeric, rtol=1e-6, atol=1e-7)

    @pytest.mark.parametrize("theta", [
        MixtureParams([1 / 3, 2 / 3], [[1.0, 2.0], [-1.0, -3.0]], [0.5, 0.8]),
        MixtureParams([0.2, 0.3, 0.5], [[-2.0], [0.0], [3.0]], [0.5, 1.0, 0.7]),
    ])
    def test_hessian_matches_finite_differences(self, linear_schedule, theta):
        x = np.full(theta.dim, 0.4)
        numeric = fd_jacobian(lambda z: gm_score(theta, linear_schedule, 200, z), x, step=1e-5)
        np.testing.assert_allclose(gm_hessian(theta, linear_schedule, 200, x), numeric, atol=1e-6)

    def test_rank_never_exceeds_dimension(self, linear_schedule):
        theta = MixtureParams([0.2, 0.3, 0.5], [[-2.0], [0.0], [3.0]], [0.5, 1.0, 0.7])
        _, hessian = gm_hessian_lowrank(theta, linear_schedule, 50, np.zeros((4, 1)))
        assert hessian.rank <= 1

    def test_terminal_score_is_standard_normal(self, two_modes_1d):
        sched = make_schedule("linear", 2000)
        x = np.linspace(-3, 3, 7)[:, None]
        np.testing.assert_allclose(gm_score_batch(two_modes_1d, sched, 2000, x), -x, atol=1e-3)

    def test_student_t_has_no_closed_form(self, linear_schedule):
        theta = MixtureParams([1.0], [[0.0]], [1.0], family="student_t", df=3.0)
        with pytest.raises(FamilyError):
            gm_score(theta, linear_schedule, 10, np.zeros(1))

    def test_dimension_mismatch(self, linear_schedule, paramest_truth):
        with pytest.raises(DimensionError):
            GaussianMixtureOracle(paramest_truth).evaluate(linear_schedule, 10, np.zeros((3, 5)))

    def test_score_only_drops_hessian(self, linear_schedule, paramest_truth, rng):
        x = rng.standard_normal((3, 2))
        score, hessian = ScoreOnlyModel(GaussianMixtureOracle(paramest_truth)).evaluate(linear_schedule, 40, x)
        np.testing.assert_array_equal(score, gm_score_batch(paramest_truth, linear_schedule, 40, x))
        np.testing.assert_array_equal(hessian.dense(), np.zeros((3, 2, 2)))


class TestMlpModel:
    def test_parameter_count(self):
        assert MlpModel.parameter_count(2, 8, 2) == 4 * 8 + 9 * 8
        assert MlpModel.initialize(2, 8, 2).phi.size == 104

    def test_zero_network(self, linear_schedule):
        model = MlpModel(phi=np.zeros(MlpModel.parameter_count(3, 4, 1)), dim=3, width=4, rank=1)
        score, hessian = mlp_eval(model, linear_schedule, 500, np.ones(3))
        np.testing.assert_array_equal(score, np.zeros(3))
        np.testing.assert_allclose(hessian.u, np.full(3, -math.log(2.0)), rtol=1e-15)
        np.testing.assert_array_equal(hessian.V, np.zeros((3, 1)))

    def test_rank_cannot_exceed_dimension(self):
        with pytest.raises(DimensionError):
            MlpModel.initialize(dim=2, width=4, rank=3)

    def test_backward_matches_finite_differences(self, short_schedule, small_mlp, rng):
        x = rng.standard_normal((5, 2))
        t = np.array([1, 10, 20, 35, 50])
        upstream = (rng.standard_normal((5, 2)), rng.standard_normal((5, 2)), rng.standard_normal((5, 2, 2)))
        analytic = small_mlp.backward(small_mlp.forward(short_schedule, t, x), *upstream)
        numeric = fd_gradient(lambda phi: _contract(small_mlp.with_params(phi), short_schedule, t, x, upstream),
                              small_mlp.phi, rel_step=1e-6)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_backward_is_linear_in_upstream(self, short_schedule, small_mlp, rng):
        x = rng.standard_normal(2)
        first = (rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal((2, 2)))
        second = (rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal((2, 2)))
        combined = tuple(2.0 * a - 0.5 * b for a, b in zip(first, second))
        grad = mlp_param_gradient(small_mlp, short_schedule, 7, x, combined)
        expected = (2.0 * mlp_param_gradient(small_mlp, short_schedule, 7, x, first)
                    - 0.5 * mlp_param_gradient(small_mlp, short_schedule, 7, x, second))
        np.testing.assert_allclose(grad, expected, atol=1e-12)

    def test_zero_upstream_gives_zero_gradient(self, short_schedule, small_mlp):
        upstream = (np.zeros(2), np.zeros(2), np.zeros((2, 2)))
        grad = mlp_param_gradient(small_mlp, short_schedule, 3, np.ones(2), upstream)
        np.testing.assert_array_equal(grad, np.zeros_like(small_mlp.phi))

    def test_upstream_shapes_checked(self, short_schedule, small_mlp):
        with pytest.raises(DimensionError):
            mlp_param_gradient(small_mlp, short_schedule, 3, np.ones(2), (np.zeros(3), np.zeros(2), np.zeros((2, 2))))

    def test_record_round_trip(self, short_schedule, small_mlp, rng):
        record = small_mlp.to_record(short_schedule.to_config(), config_hash="abc")
        rebuilt = model_from_record(record)
        x = rng.standard_normal((4, 2))
        score, hessian = rebuilt.evaluate(short_schedule, 12, x)
        expected_score, expected_hessian = small_mlp.evaluate(short_schedule, 12, x)
        np.testing.assert_array_equal(score, expected_score)
        np.testing.assert_array_equal(hessian.V, expected_hessian.V)

    def test_oracle_record_round_trip(self, short_schedule, paramest_truth):
        record = GaussianMixtureOracle(paramest_truth).to_record(short_schedule.to_config())
        rebuilt = model_from_record(record)
        np.testing.assert_array_equal(rebuilt.theta.means, paramest_truth.means)


class TestLowRankPlusDiag:
    def test_dense(self):
        H = LowRankPlusDiag(np.array([1.0, 2.0]), np.array([[1.0], [3.0]]))
        np.testing.assert_array_equal(H.dense(), [[2.0, 3.0], [3.0, 11.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            LowRankPlusDiag(np.zeros(3), np.zeros((2, 1)))

    def test_zeros(self):
        H = LowRankPlusDiag.zeros(4, 3)
        assert H.rank == 0 and H.dim == 3
        np.testing.assert_array_equal(H.row(2).dense(), np.zeros((3, 3)))
