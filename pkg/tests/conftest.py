import numpy as np
import pytest

from rlab.seeding import rng_from


def random_image(rng, shape=(3, 8, 8), lo=0.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape).astype(np.float32)


@pytest.fixture
def rng():
    return rng_from("tests", 1234)


@pytest.fixture
def image(rng):
    return random_image(rng)
