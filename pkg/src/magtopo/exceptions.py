"""Exception types raised across the package."""


class MagtopoError(Exception):
    """Base class for all package errors."""


class MeshError(MagtopoError, ValueError):
    """Invalid mesh data, geometry parameters or mesh file contents."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateElementError(MeshError):
    pass


class MaterialError(MagtopoError, ValueError):
    """Invalid B-H samples or material parameters."""


class SolverError(MagtopoError, RuntimeError):
    """A linear or nonlinear solve failed to reach its tolerance."""

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace) if trace is not None else []


class GapCircleError(MagtopoError, ValueError):
    """The evaluation circle leaves the air gap."""


class UnsupportedModeError(MagtopoError, ValueError):
    """Operation not defined for the requested material mode."""


class ContrastError(MagtopoError, ValueError):
    """Zero material contrast where a nonzero one is required."""


class ConfigError(MagtopoError, ValueError):
    """Invalid run configuration."""


class ShapeError(MagtopoError, ValueError):
    """Invalid inclusion shape specification."""
