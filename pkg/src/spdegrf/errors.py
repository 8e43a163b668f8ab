"""Exception types raised across the package."""


class SpdeGrfError(Exception):
    """Base class for all package errors."""


class InvalidGridError(SpdeGrfError, ValueError):
    pass


class OutOfDomainError(SpdeGrfError, ValueError):
    """A point lies outside the closed grid domain."""

    def __init__(self, point):
        self.point = tuple(float(v) for v in point)
        super().__init__(f"point {self.point} is outside the grid domain")


class InvalidBasisError(SpdeGrfError, ValueError):
    pass


class NotPositiveDefiniteError(SpdeGrfError, ArithmeticError):
    """Cholesky factorization met a non-positive pivot."""

    def __init__(self, pivot):
        self.pivot = int(pivot)
        super().__init__(f"matrix is not positive definite (pivot at index {self.pivot})")


class PatternError(SpdeGrfError, ValueError):
    """Sparsity pattern is asymmetric or not covered by a symbolic analysis."""


class UnsupportedConfigurationError(SpdeGrfError, ValueError):
    pass


class DataFormatError(SpdeGrfError, ValueError):
    """Malformed input file; ``problems`` lists (line number, message) pairs."""

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        super().__init__(message)
