"""Exception types shared across the package."""


class SingularPointError(RuntimeError):
    """An evaluation or path came too close to a zero of the cubic differential."""


class OutOfDomainError(ValueError):
    """A point lies outside a non-periodic grid."""


class GridMismatchError(ValueError):
    """Two gridded objects do not live on the same grid."""


class ConvergenceError(RuntimeError):
    """An iteration failed to reach its tolerance (final residual attached)."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
