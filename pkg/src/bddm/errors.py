"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent or invalid construction parameters (dimension mismatch, bad file, ...)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation (sigma <= 0, non-finite input, ...)."""


class UnsupportedOperationError(TypeError):
    """Operation not defined for this object kind (e.g. sigma-conditioned call on a blind denoiser)."""


class UnsupportedSizeError(ValueError):
    """Problem size outside the supported desk-scale range."""


class NumericalError(RuntimeError):
    """Computation produced non-finite values or failed to converge."""
