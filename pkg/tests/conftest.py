"""Shared fixtures for the marblr test suite."""

import numpy as np
import pytest
from scipy.special import expit

from marblr.logistic import LabeledBatch


def random_stream(seed, T, n, d, theta=None):
    """Seeded stream with an intercept column and standard normal features."""
    rng = np.random.default_rng(seed)
    if theta is None:
        theta = rng.normal(0.0, 1.0, size=d)
    batches = []
    for _ in range(T):
        z = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))]) if d > 1 else np.ones((n, 1))
        y = (rng.random(n) < expit(z @ theta)).astype(float)
        batches.append(LabeledBatch(z, y))
    return batches


@pytest.fixture
def stream_factory():
    return random_stream
