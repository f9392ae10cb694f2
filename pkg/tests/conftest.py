import numpy as np
import pytest

from smokeflow.experiments import textured_pair
from smokeflow.imgio import ImageFrame
from smokeflow.solver import SolverParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ramp():
    """32x32 frame with value (x + 1) / 255 at column x"""
    x = np.arange(32, dtype=np.float64)
    return ImageFrame(np.tile((x + 1.0) / 255.0, (32, 1)))


@pytest.fixture
def texture():
    frame1, _, _ = textured_pair(size=32, shift=(0, 0), seed=3)
    return frame1


@pytest.fixture
def shifted_pair():
    return textured_pair(size=64, shift=(1, 0), seed=0)


@pytest.fixture
def quick_params():
    return SolverParams(outer_iters=5, theta=0.25)
