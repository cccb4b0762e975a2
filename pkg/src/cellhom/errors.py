"""Exception types shared across the package."""


class CellHomError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(CellHomError, ValueError):
    """A caller-supplied argument violates a documented precondition."""


class ConfigError(CellHomError, ValueError):
    """A run/sweep configuration is inconsistent or incomplete."""


class SolverFailure(CellHomError, RuntimeError):
    """An iterative solver stopped without reaching its tolerance.

    Carries the final relative residual so callers can report it.
    """

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (final relative residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class IntegratorFailure(CellHomError, RuntimeError):
    """Adaptive time integration could not advance (dt underflow, step cap)."""
