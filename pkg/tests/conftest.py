import numpy as np
import pytest

from rqlearn.crossfit import NuisanceLearners
from rqlearn.data_model import Dataset
from rqlearn.learners import LearnerSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20260401)


def small_dataset(rng, n=40, p1=3, p2=3, eligible_frac=0.6):
    """Random well-posed dataset with some rows missing a2."""
    x1 = rng.uniform(-1, 1, size=(n, p1))
    x2 = rng.uniform(-1, 1, size=(n, p2))
    a1 = rng.integers(0, 2, size=n).astype(np.int8)
    r = (rng.uniform(size=n) < eligible_frac).astype(np.int8)
    a2 = np.where(r == 1, rng.integers(0, 2, size=n).astype(float), np.nan)
    y = rng.normal(size=n)
    return Dataset(x1=x1, a1=a1, x2=x2, a2=a2, y=y, r=r)


@pytest.fixture
def fast_learners():
    """Cheapest sensible nuisance suite for pipeline tests."""
    return NuisanceLearners(
        mu2y=LearnerSpec(kind="linear"),
        mu2a=LearnerSpec(kind="logistic", task="probability"),
        mu1y=LearnerSpec(kind="linear"),
        mu1a=LearnerSpec(kind="logistic", task="probability"),
    )
