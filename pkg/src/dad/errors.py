"""Exception types raised across the package."""


class DADError(Exception):
    pass


class ConfigError(DADError, ValueError):
    """Unknown identifiers or inconsistent run/model configuration."""


class ValidationError(DADError, ValueError):
    """Input data that violates a documented precondition."""


class ShapeError(DADError, ValueError):
    """Tensor shapes that cannot be reconciled."""


class ResourceError(DADError, RuntimeError):
    """An operation would exceed a configured memory guard."""


class LoadError(DADError, OSError):
    """Missing, corrupt or incompatible weight / checkpoint files."""
