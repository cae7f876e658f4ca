import numpy as np
import pytest

from bddm.presets import gaussian_model, two_component_mixture


@pytest.fixture(scope="session")
def mixture_d500():
    return two_component_mixture(d=500, k=2, seed=2024)


@pytest.fixture(scope="session")
def mixture_d2():
    return two_component_mixture(d=2, k=2, seed=2024)


@pytest.fixture(scope="session")
def small_mixture():
    """Low-dimensional three-component mixture for oracle comparisons."""
    rng = np.random.default_rng(11)
    means = rng.standard_normal((3, 4))
    factor = 0.6 * rng.standard_normal((4, 4))
    cov = factor @ factor.T
    from bddm.mixture import GaussianMixture

    return GaussianMixture.from_covariance([0.5, 0.3, 0.2], means, cov, 4)


@pytest.fixture(scope="session")
def gaussian_d500():
    return gaussian_model(d=500, k=2, seed=77, embedding="random")
