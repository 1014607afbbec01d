import numpy as np
import pytest

from varimatch.geometry import DiscreteVarifold, synth_sphere, truncate_by_cylinder


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_varifold(rng, n, scale=1.0, dim=3, w_low=0.2, w_high=2.0):
    centers = rng.normal(size=(n, dim)) * scale
    directors = rng.normal(size=(n, dim))
    directors /= np.linalg.norm(directors, axis=1)[:, None]
    weights = rng.uniform(w_low, w_high, size=n)
    return DiscreteVarifold(centers, directors, weights)


def perturbed_varifold(base, centers=None, directors=None, weights=None):
    """Clone with raw overrides, skipping validation.

    Finite-difference probes nudge directors off the unit sphere; the
    constructor would reject that, so tests assemble the clone directly.
    """
    out = DiscreteVarifold.__new__(DiscreteVarifold)
    out.centers = np.array(base.centers if centers is None else centers)
    out.directors = np.array(base.directors if directors is None else directors)
    out.weights = np.array(base.weights if weights is None else weights)
    return out


@pytest.fixture(scope="session")
def sphere_pair():
    """Radius-10 complete sphere and its cylinder-truncated copy."""
    target = synth_sphere(10.0, 3)
    source = truncate_by_cylinder(
        target, np.zeros(3), np.array([0.0, 0.0, 1.0]), 6.0
    )
    return source, target
