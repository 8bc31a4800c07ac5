"""Exception types shared across the package."""


class ModelConstructionError(ValueError):
    """Raised when model inputs are structurally invalid (for example a
    covariance matrix that is not symmetric positive semidefinite)."""


class NonConvergentSystemError(RuntimeError):
    """Raised when a steady-state quantity is requested for a mean system
    whose state transition matrix has spectral radius >= 1."""


class NonConvexProblemError(ValueError):
    """Raised when requested problem parameters would produce a non-convex
    program (for example an insolvency probability bound above 1/2)."""


class ConfigError(ValueError):
    """Configuration file error, carrying file/line context when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)
