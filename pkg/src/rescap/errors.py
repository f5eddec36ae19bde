"""Exception hierarchy shared by all modules."""


class RescapError(Exception):
    """Base class for library errors."""


class InsufficientData(RescapError):
    pass


class OrderTooHigh(RescapError):
    pass


class MissingMoment(RescapError):
    pass


class InvalidModel(RescapError, ValueError):
    pass


class NonFiniteState(RescapError, FloatingPointError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t})")
        self.t = t


class NoConvergence(RescapError):
    pass


class SingularSystem(RescapError, ValueError):
    pass


class SingularGamma(SingularSystem):
    pass


class ZeroVarianceTeaching(RescapError, ValueError):
    pass


class TruncationBudgetExceeded(RescapError):
    pass


class HypothesisViolated(RescapError):
    pass


class ConfigError(RescapError, ValueError):
    pass
