"""Exception types shared across the package."""


class AcocoaError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(AcocoaError, ValueError):
    pass


class IndexOutOfRange(AcocoaError, IndexError):
    pass


class DuplicateEntry(AcocoaError, ValueError):
    pass


class NonFinite(AcocoaError, ArithmeticError):
    """A numerical operation produced NaN or Inf."""


class GapUnsupported(AcocoaError, ValueError):
    """Duality gap requested for an objective whose conjugate is not finite."""


class InvalidK(AcocoaError, ValueError):
    pass


class InvalidGamma(AcocoaError, ValueError):
    pass


class InvalidSpec(AcocoaError, ValueError):
    pass


class SingularBlock(AcocoaError, ArithmeticError):
    """A block Gram matrix has no usable positive eigenspace."""


class ZeroCurvature(AcocoaError, ArithmeticError):
    """Coordinate step requested where the quadratic coefficient vanishes."""


class OracleNotConverged(AcocoaError, RuntimeError):
    pass


class HistoryMissing(AcocoaError, RuntimeError):
    """Audit requested but the run did not retain iterate history."""


class ReferenceMissing(AcocoaError, RuntimeError):
    pass


class TransportInitFailure(AcocoaError, RuntimeError):
    pass


class RoundMismatch(AcocoaError, RuntimeError):
    """Communication call out of protocol order, or round ids disagree."""


class WorkerLost(AcocoaError, RuntimeError):
    pass


class WorkerPanic(AcocoaError, RuntimeError):
    """A worker-local closure raised; original exception is chained."""

    def __init__(self, worker_id, cause):
        super().__init__(f"worker {worker_id} failed: {cause!r}")
        self.worker_id = worker_id
        self.cause = cause


class ParseError(AcocoaError, ValueError):
    def __init__(self, message, line=None, token=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", token {token})" if token is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.token = token


class EmptyFile(AcocoaError, ValueError):
    pass


class InsufficientData(AcocoaError, ValueError):
    pass
