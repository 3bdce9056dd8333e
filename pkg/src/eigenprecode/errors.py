"""Exception hierarchy shared by all modules.

Numerical failures derive from NumericalError, input/contract violations
from ValidationError, so the CLI can map them to distinct exit codes.
"""


class EigenprecodeError(Exception):
    pass


class ValidationError(EigenprecodeError):
    """Bad arguments or malformed inputs (CLI exit code 2)."""


class NumericalError(EigenprecodeError):
    """Numerical failure in an otherwise valid computation (CLI exit code 3)."""


# linear algebra kernels
class DimensionMismatch(ValidationError):
    pass


class NotHermitian(ValidationError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class MaxIterExceeded(NumericalError):
    """Carries the best iterate and its residual norm."""

    def __init__(self, msg, best=None, residual=None):
        super().__init__(msg)
        self.best = best
        self.residual = residual


class SingularN(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


# precoders
class AllZeroChannels(ValidationError):
    pass


class RequiresCriticalSampling(ValidationError):
    pass


class RequiresStatisticalOnly(ValidationError):
    pass


class SingularSystem(NumericalError):
    pass


class SingularT(NumericalError):
    pass


class SingularTh(NumericalError):
    pass


class SingularTw(NumericalError):
    pass


class NegativePower(NumericalError):
    """Power solve produced negative entries: the gamma targets are not jointly achievable."""


class NegativeMultiplier(NumericalError):
    """Multiplier recovery produced negative entries: the precoder is not KKT-consistent."""


# neural network
class ShapeMismatch(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class MissingWeights(ValidationError):
    pass


# dataset pipeline
class TooManyRejections(NumericalError):
    def __init__(self, msg, attempts=0, rejections=0):
        super().__init__(msg)
        self.attempts = attempts
        self.rejections = rejections


class BadFractions(ValidationError):
    pass
