"""Exception types raised across the package."""


class SemRDError(Exception):
    """Base class for all package errors."""


class NonFinite(SemRDError, ValueError):
    pass


class AllZero(SemRDError, ValueError):
    pass


class DimensionMismatch(SemRDError, ValueError):
    pass


class InvalidKernel(SemRDError, ValueError):
    pass


class NegativeCapacity(SemRDError, ValueError):
    pass


class DegenerateRow(SemRDError, FloatingPointError):
    pass


class EmptySupport(SemRDError, ValueError):
    pass


class NoConvergence(SemRDError, RuntimeError):
    """Iterative solver stopped without meeting its optimality test.

    ``best`` carries the best value found so far, if any.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class Diverged(SemRDError, FloatingPointError):
    """Training produced a non-finite loss; ``last_params`` holds the last finite state."""

    def __init__(self, message, last_params=None, epoch=None):
        super().__init__(message)
        self.last_params = last_params
        self.epoch = epoch


class NotPositiveDefinite(SemRDError, ValueError):
    pass


class DegenerateGrid(SemRDError, ValueError):
    pass


class ParseError(SemRDError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(SemRDError, ValueError):
    pass


class Infeasible(SemRDError, ValueError):
    def __init__(self, message, best_violation=None):
        super().__init__(message)
        self.best_violation = best_violation


class DomainError(SemRDError, ValueError):
    pass


class TargetUnreachable(SemRDError, ValueError):
    pass


class ConfigError(SemRDError, ValueError):
    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
