"""Shared exception types."""


class VotecutError(Exception):
    """Base class for errors raised by this package."""


class ShapeMismatchError(VotecutError, ValueError):
    """Two rasters or tensors that must share dimensions do not."""


class FormatError(VotecutError, ValueError):
    """A file or payload violates its declared format."""


class DataError(VotecutError, ValueError):
    """Input values are structurally valid but semantically unusable."""


class EmptyMaskError(VotecutError, ValueError):
    """An operation that requires at least one set bit got an empty mask."""


class SolverError(VotecutError, RuntimeError):
    """Eigen-solver failed to converge within its iteration budget.

    Carries the best residual achieved so callers can decide whether the
    partial answer is still usable.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual
