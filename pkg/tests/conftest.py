import numpy as np
import pytest

from weightflow.data import load_iris, make_blobs
from weightflow.nn_core import ArchitectureSpec, TrainHyper, train_network


@pytest.fixture(scope="session")
def iris():
    return load_iris(0.2, seed=0)


@pytest.fixture(scope="session")
def blobs():
    return make_blobs(num_classes=3, per_class=50, d=4, spread=1.0, seed=0)


@pytest.fixture(scope="session")
def tiny_population(blobs):
    """Four quickly trained [4,8,3] networks on blobs."""
    train, test = blobs
    arch = ArchitectureSpec((4, 8, 3), "relu")
    return [train_network(arch, train, TrainHyper(epochs=15, seed=50 + i),
                          holdout=test) for i in range(4)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)
