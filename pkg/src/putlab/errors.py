"""Exception hierarchy shared by the solver, oracle and analysis modules."""


class PutLabError(Exception):
    """Base class for all package errors."""


class ParameterError(PutLabError, ValueError):
    """Market or tree parameters outside their admissible domain."""


class GridError(PutLabError, ValueError):
    """Degenerate or inconsistent discretization."""


class IterationLimitError(PutLabError, RuntimeError):
    """An iterative solver did not converge; ``report`` holds partial progress."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NumericalError(PutLabError, ArithmeticError):
    """Pivot breakdown or other loss of numerical meaning."""


class ExtractionError(PutLabError, RuntimeError):
    """No exercise region could be located on a solved surface."""


class InputError(PutLabError, ValueError):
    """Malformed curve or window passed to an analysis routine."""


class DomainError(PutLabError, ValueError):
    """Argument outside the region where a formula or field is defined."""


class UnsupportedBranchError(DomainError):
    """No near-expiry expansion exists for the requested parameters."""
