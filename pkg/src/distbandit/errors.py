"""Exception hierarchy for the simulator."""


class BanditError(Exception):
    """Base class for all errors raised by distbandit."""


class DimensionError(BanditError, ValueError):
    pass


class NotPSDError(BanditError, ValueError):
    pass


class IllConditionedError(BanditError, ArithmeticError):
    pass


class GraphError(BanditError, ValueError):
    pass


class SpectralError(BanditError, ValueError):
    """Raised when |lambda_2| is unusable (zero, or >= 1)."""


class ConfigError(BanditError, ValueError):
    pass


class DesignConvergenceError(BanditError, RuntimeError):
    """Frank-Wolfe stopped before the certificate was met.

    The last iterate is kept on ``weights`` so a caller may still use it.
    """

    def __init__(self, message, weights=None, g_value=None):
        super().__init__(message)
        self.weights = weights
        self.g_value = g_value


class CoreIdentificationError(BanditError, RuntimeError):
    """Core search hit its iteration cap or emptied the candidate list."""

    def __init__(self, message, reason, iterations):
        super().__init__(message)
        self.reason = reason
        self.iterations = iterations


class MixedSoftmaxError(BanditError, RuntimeError):
    pass


class ExplorationPolicyError(BanditError, RuntimeError):
    pass
