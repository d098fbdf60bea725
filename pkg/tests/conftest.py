import numpy as np
import pytest
from hypothesis import settings

from vecor.core import BatchGrid, SeededRng, Space

settings.register_profile("vecor", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("vecor")


@pytest.fixture
def rng():
    return SeededRng(1234, "tests")


def grid(values, space=Space.LATENT):
    """Small helper: build a BatchGrid from nested lists or an array."""
    return BatchGrid(np.asarray(values, dtype=np.float64), space)
