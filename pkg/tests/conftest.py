import numpy as np
import pytest
import torch

from svsnet.model import ModelConfig
from svsnet.training import init_params


@pytest.fixture(scope="session")
def toy_config() -> ModelConfig:
    """Small widths so forward passes stay cheap in unit tests."""
    return ModelConfig(
        sinc_filters=8,
        conv_channels=8,
        recurrent_hidden=16,
        head_hidden=32,
    )


@pytest.fixture(scope="session")
def toy_model(toy_config):
    return init_params(toy_config, seed=7)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
