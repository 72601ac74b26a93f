import numpy as np
import pytest

from helpers import small_bundle


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_bundle():
    """Shared read-only dataset: 30-pair isomorphic graphs with 5 folds."""
    return small_bundle(seed=0)
