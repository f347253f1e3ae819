"""Exception hierarchy shared by all solver modules."""


class EtrsError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(EtrsError):
    """Array shapes are structurally inconsistent (not a model assumption)."""


class ValidationError(EtrsError):
    """The instance violates a standing model assumption.

    Carries the list of violated assumptions in ``entries``.
    """

    def __init__(self, entries):
        self.entries = list(entries)
        super().__init__("instance rejected: " + "; ".join(self.entries))


class EigenConvergenceError(EtrsError):
    """Iterative eigensolver failed; ``best_estimate`` holds the last Ritz value."""

    def __init__(self, message, best_estimate=None):
        self.best_estimate = best_estimate
        super().__init__(message)


class IterativeSolveError(EtrsError):
    """A conjugate-gradient solve did not reach its tolerance; carries the residual."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class InternalInconsistencyError(EtrsError):
    """A state the theory rules out was observed numerically."""


class MatrixFormatError(EtrsError):
    """Malformed instance file; ``line`` is the 1-based offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OracleSizeError(EtrsError):
    """Instance exceeds the dense reference solver's size cap."""
