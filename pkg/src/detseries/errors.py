"""Exception hierarchy shared by all detseries modules."""


class DetseriesError(Exception):
    """Base class for all library errors."""


class ParseError(DetseriesError):
    """Malformed scalar text, matrix file, or zeros file."""


class PrecisionMismatch(DetseriesError):
    """Scalars participating in one computation carry different precisions."""


class ZeroPivot(DetseriesError):
    """Leading submatrix is exactly singular at the given pivot step.

    Carries the 1-based pivot index and whatever partial results were
    produced before the abort (determinant series up to step-1, minors
    rows up to size step).
    """

    def __init__(self, step, trace=None, series=None):
        super().__init__(f"exact zero pivot at elimination step {step}")
        self.step = step
        self.trace = trace
        self.series = series


class NormalizationUndefined(DetseriesError):
    """Leading signed minor is zero, so normalized minors do not exist."""


class SizeTooLarge(DetseriesError):
    """Matrix exceeds the size cap of the exact oracle."""


class InsufficientZeros(DetseriesError):
    """Fewer zeta zeros available than the construction requires."""


class NotMonotone(DetseriesError):
    """Zeros file is not strictly increasing."""


class GammaEvaluationFailed(DetseriesError):
    """Gamma evaluator could not deliver the requested accuracy."""


class CorruptPayload(DetseriesError):
    """Serialized row payload failed its magic, length, or CRC check."""


class WorkerFailure(DetseriesError):
    """A parallel worker died or returned an inconsistent result."""

    def __init__(self, worker, message=""):
        super().__init__(f"worker {worker} failed: {message}")
        self.worker = worker


class StorageError(DetseriesError):
    """Block store I/O failure; carries the offending block id."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class GridIncomplete(DetseriesError):
    """Attempt to extend a block grid whose current stages are unfinished."""


class SeriesMismatch(DetseriesError):
    """Two minor series do not come from the same input matrix."""


class InsufficientData(DetseriesError):
    """Not enough valid points for a regression fit."""
