"""Blind denoising diffusion laboratory on subspace-supported Gaussian mixtures."""

from .errors import (
    ConfigurationError,
    DomainError,
    NumericalError,
    UnsupportedOperationError,
    UnsupportedSizeError,
)
from .mixture import GaussianMixture, SubspaceEmbedding, embed_mixture

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "NumericalError",
    "UnsupportedOperationError",
    "UnsupportedSizeError",
    "GaussianMixture",
    "SubspaceEmbedding",
    "embed_mixture",
    "__version__",
]
