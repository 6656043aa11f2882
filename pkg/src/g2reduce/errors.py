"""Exception types shared across the library."""


class G2ReduceError(Exception):
    """Base class for library errors."""


class InvalidInputError(G2ReduceError):
    """Non-finite or structurally invalid input."""


class ConeViolationError(G2ReduceError):
    """A symmetric matrix left the positive-definite cone.

    Carries the offending leading principal minor (index and value) when known.
    """

    def __init__(self, message, minor_index=None, minor_value=None, node=None):
        super().__init__(message)
        self.minor_index = minor_index
        self.minor_value = minor_value
        self.node = node


class PositivityError(G2ReduceError):
    """A quantity required to be positive is not.

    `worst` holds the most negative value encountered, `where` its location
    (eigenvalue index, node triple, or sample index depending on context).
    """

    def __init__(self, message, worst=None, where=None):
        super().__init__(message)
        self.worst = worst
        self.where = where


class StencilError(G2ReduceError):
    """A finite-difference stencil read an unavailable node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NonConvergenceError(G2ReduceError):
    """An iterative solver failed to reach its tolerance.

    `history` is the residual-norm trace up to the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class LinearSolverError(NonConvergenceError):
    """Breakdown or stagnation of a sparse linear solve."""


class DomainError(G2ReduceError):
    """Argument outside the domain of the requested transform."""
