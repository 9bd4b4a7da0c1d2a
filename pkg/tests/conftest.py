import numpy as np
import pytest

from netfield import Ball, Box, SigmoidRadialField


@pytest.fixture
def unit_box_2d():
    return Box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def ball_3d():
    return Ball([0.0, 0.0, 0.0], 2.0)


@pytest.fixture
def sigmoid_g():
    return SigmoidRadialField()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
