import numpy as np
import pytest

from memerobust.synthetic import make_fixture, make_splits
from memerobust.toymodel import ModelConfig, TrainConfig, train_classifier


@pytest.fixture(scope="session")
def splits():
    return make_splits(seed=0, n_train=200, n_val=50, n_test=100)


@pytest.fixture(scope="session")
def model(splits):
    return train_classifier(splits["train"], TrainConfig(epochs=25), seed=0)


@pytest.fixture(scope="session")
def tda_model(splits):
    return train_classifier(splits["train"], TrainConfig(epochs=25), with_tda=True, seed=0)


@pytest.fixture(scope="session")
def linear_model(splits):
    """Identity head activation, no adapter: loss is a monotone function of an
    affine map of the pooled byte embedding."""
    return train_classifier(splits["train"], TrainConfig(epochs=10), seed=3,
                            model_config=ModelConfig(activation="identity"))


@pytest.fixture(scope="session")
def fixture200():
    return make_fixture(200, seed=11, split="train")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
