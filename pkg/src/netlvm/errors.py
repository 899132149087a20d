"""Exception hierarchy shared across the package."""


class NetlvmError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpecError(NetlvmError, ValueError):
    """Model specification is inconsistent or out of the supported range."""


class SupportError(NetlvmError, ValueError):
    """A response value lies outside the family's support."""


class DataFormatError(NetlvmError, ValueError):
    """An on-disk file does not match the documented schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(NetlvmError, RuntimeError):
    """A numerical routine failed (non-convergence, singular matrix, ...)."""


class InnerSolveError(NumericalError):
    """The per-layer latent-mode Newton solve did not converge.

    Carries the last iterate and the stationarity residual so callers can
    inspect (or restart from) the failed state.
    """

    def __init__(self, message, z_last=None, grad_norm=None, layer=None):
        super().__init__(message)
        self.z_last = z_last
        self.grad_norm = grad_norm
        self.layer = layer


class RankDeficiencyError(NumericalError):
    """A matrix that must be invertible is numerically rank deficient."""

    def __init__(self, message, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions
