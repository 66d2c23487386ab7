import numpy as np
import pytest

from ChannelGating.Networks import NetworkConfig, build_network


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    # two stages, one projection block, 8x8 inputs
    return NetworkConfig(widths=(4, 8), blocks=(1, 1), resolution=8, classes=3)


@pytest.fixture
def tiny_model(tiny_config):
    model = build_network(tiny_config, seed=3)
    model.eval()
    return model
