import numpy as np
import pytest
import torch

from masktransfer.data import UnpairedDataset
from masktransfer.networks import NetConfig, build_model

TOY_RESOLUTION = 8
TOY_SEP = 8


@pytest.fixture(scope="session")
def toy_config():
    return NetConfig(resolution=TOY_RESOLUTION, sep=TOY_SEP)


@pytest.fixture()
def toy_bundle(toy_config):
    return build_model(toy_config, seed=7)


@pytest.fixture(scope="session")
def toy_dataset():
    rng = np.random.default_rng(42)
    a = rng.uniform(-1, 1, (16, 3, TOY_RESOLUTION, TOY_RESOLUTION)).astype(np.float32)
    b = rng.uniform(-1, 1, (16, 3, TOY_RESOLUTION, TOY_RESOLUTION)).astype(np.float32)
    return UnpairedDataset(a, b, TOY_RESOLUTION)


@pytest.fixture()
def toy_batches(toy_dataset):
    a = torch.from_numpy(toy_dataset.images_a[:4])
    b = torch.from_numpy(toy_dataset.images_b[:4])
    return a, b
