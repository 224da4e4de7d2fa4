"""Exception hierarchy shared across the package."""


class AeddError(Exception):
    """Base class for all package errors."""


class ShapeError(AeddError, ValueError):
    pass


class ContractError(AeddError, ValueError):
    """A documented precondition was violated by the caller."""


class DomainError(AeddError, ValueError):
    pass


class InputError(AeddError, ValueError):
    """Malformed user-supplied data or configuration."""


class NumericError(AeddError, ArithmeticError):
    """Numerical failure: non-convergence, NaN loss, ...

    ``diagnostics`` carries a JSON-serialisable dict describing the state at
    the time of failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContainerError(AeddError, IOError):
    """Unreadable, truncated, corrupt or version-incompatible container file."""
