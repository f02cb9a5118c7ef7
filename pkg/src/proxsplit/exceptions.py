"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument is outside the domain an operation accepts."""


class DimensionError(InvalidArgumentError):
    """Array shapes do not chain."""


class InfeasibleSetError(InvalidArgumentError):
    """A constraint set is empty."""


class CertificateError(InvalidArgumentError):
    """Step sizes violate a convergence certificate in certified mode."""


class ConfigError(ValueError):
    """A run configuration is malformed."""


class DigestMismatchError(RuntimeError):
    """A stored reference does not match its recorded digest."""
