"""Exception hierarchy shared by all descan modules."""


class DescanError(Exception):
    """Base class for all descan errors."""


class ParameterError(DescanError):
    """A physical parameter violates its admissible bound."""


class CodecError(DescanError):
    """Malformed or unsupported netpbm data.

    Carries the byte offset at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionError(DescanError):
    """Image / operator / shape dimensions do not match."""


class DomainError(DescanError):
    """A query lies outside the domain of a discretized map."""


class SolverError(DescanError):
    """The iterative solve did not reach its tolerance.

    Carries the relative residual achieved so the caller can decide
    whether to retry with stronger regularization.
    """

    def __init__(self, message, residual=None, iterations=None):
        if residual is not None:
            message = f"{message} (achieved relative residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FitError(DescanError):
    """All optimizer starts diverged.  Carries the best residual found."""

    def __init__(self, message, best_residual=None):
        if best_residual is not None:
            message = f"{message} (best residual {best_residual:.3e})"
        super().__init__(message)
        self.best_residual = best_residual


class EstimationError(DescanError):
    """Estimation input does not carry enough signal or coverage."""


class CalibrationError(DescanError):
    """A calibration strip could not be read."""


class DetectorError(DescanError):
    """Artifact detector preconditions not met."""
