"""Exception types raised across the package."""


class RnnCpSiError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(RnnCpSiError, ValueError):
    pass


class RangeError(RnnCpSiError, IndexError):
    pass


class TrainingError(RnnCpSiError):
    pass


class WeightFileError(RnnCpSiError):
    """Weight file is malformed; ``field`` names the offending entry when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DetectionFailure(RnnCpSiError):
    """Fewer local maxima than requested change points."""


class DegenerateTieError(RnnCpSiError):
    """Two scores compared by the detector are numerically equal at the witness."""


class InconsistencyError(RnnCpSiError):
    """A witness point violates a constraint it generated (upstream propagation bug)."""


class NumericError(RnnCpSiError, ArithmeticError):
    pass


class ModelError(RnnCpSiError):
    """Covariance or noise model is unusable (e.g. not positive definite)."""


class DegenerateSegmentError(RnnCpSiError):
    pass


class CalibrationError(RnnCpSiError):
    pass


class EstimationError(RnnCpSiError):
    pass


class SearchCapExceeded(RnnCpSiError):
    """Parametric search hit its iteration cap.

    ``p_bounds`` carries the valid (lower, upper) bracket of the selective
    p-value accumulated before stopping.
    """

    def __init__(self, message: str, p_bounds: tuple[float, float] | None = None,
                 iterations: int = 0):
        super().__init__(message)
        self.p_bounds = p_bounds
        self.iterations = iterations
