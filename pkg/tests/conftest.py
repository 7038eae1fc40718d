import numpy as np
import pytest

from greenfed import nn


@pytest.fixture
def tiny_arch():
    return nn.CnnArch(in_channels=1, image_size=4, hidden_channels=3, num_classes=4)


@pytest.fixture
def small_arch():
    return nn.CnnArch(in_channels=1, image_size=8, hidden_channels=8, num_classes=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
