"""Exception types shared across the package.

Each maps to a CLI exit code in ``rydcrit.cli``; library code raises these
rather than calling sys.exit.
"""


class RydcritError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(RydcritError, ValueError):
    """Invalid lattice geometry or parameters (n_sites < 3, spacing <= 0, ...)."""


class DomainError(RydcritError, ValueError):
    """Argument outside its physical or numerical domain."""


class BasisMismatchError(RydcritError, ValueError):
    """State vector and operator refer to different basis spaces."""


class CapacityError(RydcritError):
    """Requested problem size exceeds the configured capacity cap."""


class ConvergenceError(RydcritError):
    """Iterative eigensolve failed to reach the residual tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class IntegrationError(RydcritError):
    """Time integration failed its accuracy or step-count budget."""

    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


class FitDegenerateError(RydcritError):
    """Fit is under-determined or its objective is degenerate on the data."""


class BootstrapUnstableError(RydcritError):
    """Too many bootstrap replicates failed to produce an estimate."""


class ConfigError(RydcritError, ValueError):
    """Configuration file rejected; ``path`` points at the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
