"""
Shared fixtures for the test suite.
"""

import math

import numpy as np
import pytest

from services.schedule_service import make_rng, make_schedule
from services.score_model_service import MixtureParams, MlpModel


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def linear_schedule():
    return make_schedule("linear", 1000)


@pytest.fixture
def short_schedule():
    return make_schedule("linear", 50)


@pytest.fixture
def standard_normal_2d():
    return MixtureParams([1.0], [[0.0, 0.0]], [1.0])


@pytest.fixture
def two_modes_1d():
    return MixtureParams([0.5, 0.5], [[-10.0], [10.0]], [1.0, 1.0])


@pytest.fixture
def paramest_truth():
    return MixtureParams([1.0 / 3.0, 2.0 / 3.0], [[1.0, 2.0], [-1.0, -3.0]], [math.sqrt(0.3), math.sqrt(0.6)])


@pytest.fixture
def small_mlp():
    model = MlpModel.initialize(dim=2, width=8, rank=2, seed=3)
    return model.with_params(0.5 * model.phi)
