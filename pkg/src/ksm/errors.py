"""Exception types raised across the package."""


class KsmError(Exception):
    """Base class for all domain errors."""


class ChannelError(KsmError, ValueError):
    pass


class NotStochastic(ChannelError):
    pass


class NotIrreducible(ChannelError):
    pass


class TooSmall(ChannelError):
    pass


class ComplexSecondEigenvalue(ChannelError):
    pass


class ZeroLambda(ChannelError):
    pass


class NotKestenStigum(KsmError, ValueError):
    pass


class WrongPhase(KsmError, ValueError):
    pass


class BudgetExceeded(KsmError, ValueError):
    pass


class NegativeZeta(KsmError, ValueError):
    pass


class NotConverged(KsmError, ArithmeticError):
    pass


class DegenerateGrid(KsmError, ValueError):
    pass


class InvalidPair(KsmError, ValueError):
    pass


class ParseError(KsmError, ValueError):
    pass
