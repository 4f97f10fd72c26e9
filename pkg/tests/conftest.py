import numpy as np
import pytest

from shdp.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(seed=20260809).generator()


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return RngStream(seed, stream).generator()
