"""Exception types shared across the package."""


class PhylofuncError(Exception):
    """Base class for errors raised by this package."""


class NewickParseError(PhylofuncError, ValueError):
    """Malformed Newick input.

    Carries the character offset at which parsing failed so callers can
    point at the offending position.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class NumericalError(PhylofuncError, RuntimeError):
    """Base class for failures of numerical routines."""


class IllConditionedKernelError(NumericalError):
    """Covariance matrix stayed indefinite after the jitter ladder."""


class NonConvergenceError(NumericalError):
    """Optimizer failed to converge from every restart.

    ``best`` holds the least-bad parameter vector found, so callers can
    inspect what the search was doing when it gave up.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class DegenerateDataError(NumericalError):
    """Input data carries no usable signal (constant rows, empty spectrum)."""
