"""Exception hierarchy shared by every module."""


class BranchingError(Exception):
    """Base class for all errors raised by stablebranch."""


class InvalidAlpha(BranchingError, ValueError):
    pass


class InfeasibleParameters(BranchingError, ValueError):
    pass


class NotCritical(BranchingError, ValueError):
    pass


class NotADistribution(BranchingError, ValueError):
    pass


class DegenerateLaw(BranchingError, ValueError):
    pass


class DomainError(BranchingError, ValueError):
    pass


class WrongKind(BranchingError, TypeError):
    pass


class NonpositiveDuration(BranchingError, ValueError):
    pass


class NonzeroMean(BranchingError, ValueError):
    pass


class ConfigMismatch(BranchingError, ValueError):
    pass


class GridBeyondStopThreshold(BranchingError, ValueError):
    pass


class InsufficientData(BranchingError, ValueError):
    pass


class MissingSigma2(BranchingError, ValueError):
    pass


class NegativeY(BranchingError, ValueError):
    pass


class ShootingBracketFailure(BranchingError, RuntimeError):
    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class NotConverged(BranchingError, RuntimeError):
    pass


class ParseError(BranchingError, ValueError):
    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class ValidationError(BranchingError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
