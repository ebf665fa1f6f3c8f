from typing import Optional


class FracSingException(Exception):
    pass


class ConfigurationError(FracSingException):
    pass


class GridError(ConfigurationError):
    pass


class NonlinearityError(ConfigurationError):
    pass


class WindowError(ConfigurationError):
    pass


class DomainError(FracSingException):
    pass


class SolverError(FracSingException):
    pass


class AssemblyError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message: str, iterations: int = 0, residual: Optional[float] = None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class LineSearchError(ConvergenceError):
    pass


class RefinementError(SolverError):
    def __init__(self, residual: float, tol: float, hint: str):
        self.residual = residual
        self.tol = tol
        super().__init__("Residual %.3e above tolerance %.3e, %s" % (residual, tol, hint))


class MonotonicityError(SolverError):
    pass


class BarrierError(SolverError):
    def __init__(self, inequality: str, margin: float):
        self.inequality = inequality
        self.margin = margin
        super().__init__("Barrier inequality violated: %s (margin %.3e)" % (inequality, margin))


class CertificationError(SolverError):
    pass


class DiscretizationError(SolverError):
    pass


class ExportError(ConfigurationError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__("Cannot access %s: %s" % (path, reason))
