"""Fixtures that are available automatically for all tests."""

import os
from pathlib import Path

import pytest

from amcloss.config import DATA_DIR_ENV

from . import tiny_dataset, tiny_model, write_mnist_fixture

TESTS_ROOT = Path(__file__).parent.resolve()
PROJECT_ROOT = TESTS_ROOT.parent


@pytest.fixture()
def model():
    """A freshly initialized 1x12x12 network with a 4-d deep feature."""
    return tiny_model(seed=1)


@pytest.fixture(scope="session")
def train_split():
    return tiny_dataset(96, seed=10)


@pytest.fixture(scope="session")
def test_split():
    return tiny_dataset(40, seed=11, split="test")


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """A data directory holding tiny synthetic MNIST files."""
    return write_mnist_fixture(tmp_path_factory.mktemp("amcloss-data"), train=64, test=32)


@pytest.fixture(scope="session")
def real_data_dir():
    """The directory of the real datasets, for tests marked ``samples``."""
    value = os.environ.get(DATA_DIR_ENV)
    if not value or not Path(value).is_dir():
        pytest.skip(f"{DATA_DIR_ENV} is not set to a dataset directory")
    return Path(value)
