"""Canonical synthetic models and experiment defaults.

The two-component mixture and the single-Gaussian model below are the
workhorses of every experiment: intrinsic dimension k lives inside an
ambient dimension d through either a random orthonormal chart or zero
padding, mirroring the two embeddings used throughout the study.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .mixture import GaussianMixture, SubspaceEmbedding, embed_mixture


def _chart(k: int, d: int, kind: str, seed) -> SubspaceEmbedding:
    if kind == "random":
        return SubspaceEmbedding.random(k, d, seed=seed)
    if kind == "zero_pad":
        return SubspaceEmbedding.zero_pad(k, d)
    if kind == "identity":
        if k != d:
            raise ConfigurationError("identity embedding requires k == d")
        return SubspaceEmbedding.identity(d)
    raise ConfigurationError(f"unknown embedding kind {kind!r}")


def _factor_covariance(k: int, seed, spread: float, eigenvalue_ratio: float = 0.25) -> np.ndarray:
    """Well-conditioned random SPD factor covariance with scale ``spread``."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    q = q * np.sign(np.diag(r))
    evals = spread**2 * np.linspace(1.0, eigenvalue_ratio, k)
    return (q * evals) @ q.T


def two_component_mixture(
    d: int,
    k: int = 2,
    separation: float = 3.0,
    spread: float = 0.4,
    embedding: str = "random",
    seed: int = 2024,
    eigenvalue_ratio: float = 0.25,
) -> GaussianMixture:
    """Symmetric two-Gaussian mixture with intrinsic dimension k inside R^d."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(k)
    direction /= np.linalg.norm(direction)
    mean = 0.5 * separation * direction
    cov = _factor_covariance(k, rng.integers(2**32), spread, eigenvalue_ratio)
    low = GaussianMixture.from_covariance([0.5, 0.5], [mean, -mean], cov, k)
    if embedding == "identity" or (embedding == "random" and k == d):
        return embed_mixture(low, SubspaceEmbedding.identity(d)) if k == d else low
    return embed_mixture(low, _chart(k, d, embedding, rng.integers(2**32)))


def sampling_demo_mixture(d: int, seed: int = 2024) -> GaussianMixture:
    """Geometry for the sampling-success/failure contrast experiments.

    Moderately overlapping isotropic components: low-dimensional noise-level
    estimation errors then visibly distort the sampled law, while the
    high-dimensional run still reproduces it.
    """
    return two_component_mixture(
        d, k=2, separation=1.0, spread=0.6, eigenvalue_ratio=1.0, seed=seed
    )


def gaussian_model(
    d: int,
    k: int = 2,
    spread: float = 0.5,
    embedding: str = "zero_pad",
    seed: int = 2024,
) -> GaussianMixture:
    """Single centred Gaussian of rank k inside R^d (zero padded by default)."""
    rng = np.random.default_rng(seed)
    cov = _factor_covariance(k, rng.integers(2**32), spread)
    low = GaussianMixture.from_covariance([1.0], [np.zeros(k)], cov, k)
    if k == d:
        return low
    return embed_mixture(low, _chart(k, d, embedding, rng.integers(2**32)))
