import numpy as np
import pytest

from isostack import NestedModelSequence


def random_sequence(rng, max_models=12, min_models=1, n_range=(4, 400), max_jump=3):
    """Random valid sufficient statistics with strictly decreasing risks."""
    m = int(rng.integers(min_models, max_models + 1))
    jumps = rng.integers(1, max_jump + 1, size=m)
    d = np.cumsum(jumps)
    n = int(max(d[-1], rng.integers(*n_range)))
    sigma2 = float(rng.uniform(0.25, 4.0))
    delta_r = rng.gamma(1.5, 1.0, size=m) + 1e-3
    tail = float(rng.uniform(0.0, 3.0))
    r0 = float(np.sum(delta_r) + tail)
    risks = r0 - np.cumsum(delta_r)
    return NestedModelSequence(
        n=n,
        sigma2=sigma2,
        d=tuple(int(x) for x in d),
        R0=r0,
        R=tuple(float(x) for x in risks),
    )


def random_isotonic_inputs(rng, max_m=12, min_m=1):
    m = int(rng.integers(min_m, max_m + 1))
    z = rng.normal(0.0, 2.0, size=m)
    w = rng.uniform(0.1, 3.0, size=m)
    return z, w


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
