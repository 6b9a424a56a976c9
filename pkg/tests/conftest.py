import numpy as np
import pytest

from fedepth import models
from fedepth.nn.network import init_weights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    return models.mlp(classes=4, input_dim=16, hidden=12, blocks=3)


@pytest.fixture
def small_mlp_weights(small_mlp):
    return init_weights(small_mlp, 0)


@pytest.fixture
def tiny_resnet():
    # 9-block residual CNN at reduced width for fast tests
    return models.preresnet20(classes=10, input_shape=(3, 16, 16), widths=(4, 8, 8))
