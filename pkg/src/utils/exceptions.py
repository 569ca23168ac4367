from typing import Any, List, Optional


class ReiterhomError(Exception):
    """Base class for every error raised by the engine."""

    def __init__(self, message: str = "reiterhom failure.", *args: Any):
        self.message = message
        super().__init__(self.message, *args)


class DomainError(ReiterhomError, ValueError):
    """Exception raised when an argument lies outside the domain of an operation."""

    def __init__(self, message: str = "Argument outside the admissible domain."):
        super().__init__(message)


class RangeError(ReiterhomError, ValueError):
    """Exception raised when a tabulated object is queried outside its table."""

    def __init__(self, message: str = "Query outside the tabulated range."):
        super().__init__(message)


class ShapeError(ReiterhomError, ValueError):
    """Exception raised when two fields do not live on the same mesh."""

    def __init__(self, message: str = "Mesh or array shape mismatch."):
        super().__init__(message)


class KindError(ReiterhomError, TypeError):
    """Exception raised when a scalar field is expected and a vector field is given (or conversely)."""

    def __init__(self, message: str = "Field kind mismatch."):
        super().__init__(message)


class CatalogError(ReiterhomError, KeyError):
    """Exception raised for unknown built-in problem names."""

    def __init__(self, message: str = "Unknown built-in problem."):
        super().__init__(message)

    def __str__(self) -> str:
        return self.message


class ConfigError(ReiterhomError, ValueError):
    """Exception raised for invalid problem or study configurations."""

    def __init__(self, message: str = "Invalid configuration."):
        super().__init__(message)


class SolverError(ReiterhomError, RuntimeError):
    """Exception raised when a nonlinear or linear solve does not converge."""

    def __init__(self, message: str = "Solver did not converge.", history: Optional[List[float]] = None):
        self.history = list(history or [])
        self.residual = self.history[-1] if self.history else float("nan")
        super().__init__(message)


class CoercivityError(SolverError):
    """Exception raised when the frozen-coefficient modulus is not positive."""

    def __init__(self, message: str = "Non-coercive flux detected.", history: Optional[List[float]] = None):
        super().__init__(message, history)


class ResolutionError(ReiterhomError, ValueError):
    """Exception raised when a mesh cannot resolve the fast oscillation scale."""

    def __init__(self, message: str = "Mesh does not resolve the oscillation scale."):
        super().__init__(message)


class ResourceError(ReiterhomError, RuntimeError):
    """Exception raised when a memoization budget is exhausted."""

    def __init__(self, message: str = "Cache budget exceeded."):
        super().__init__(message)


class StageError(ReiterhomError, RuntimeError):
    """Exception raised by the study pipeline, naming the failing stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
