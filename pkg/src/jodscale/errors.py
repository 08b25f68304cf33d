"""Exception hierarchy shared across the toolchain."""


class JodscaleError(Exception):
    """Base class for every error raised by this package."""


class ParseError(JodscaleError):
    """A manifest or CSV file is malformed."""


class IntegrityError(JodscaleError):
    """Input data violates a structural invariant (unknown condition,
    duplicate condition, negative count, missing reference, ...)."""


class UndefinedPairError(JodscaleError):
    """A pair has no recorded comparisons in either direction."""


class DisconnectedGraphError(JodscaleError):
    """The comparison graph (plus rating linkage) splits into more than one
    component, so a joint scale would be meaningless."""


class DegenerateDataError(JodscaleError):
    """A dataset carries no usable signal, e.g. zero rating variance."""


class ConvergenceError(JodscaleError):
    """The optimizer failed to reach the requested tolerance (raised only in
    strict mode; otherwise non-convergence is reported via a flag)."""


class DesignError(JodscaleError):
    """Pair selection is infeasible under the requested constraints."""


class UndefinedCorrelationError(JodscaleError):
    """Correlation is undefined because one input has zero variance.

    The RMSE is still well defined and is carried on the exception.
    """

    def __init__(self, message: str, rmse: float | None = None):
        super().__init__(message)
        self.rmse = rmse
