"""Library for exceptions in the AoII threshold solver."""


class AoIIError(Exception):
    """Base exception for the library."""


class ConfigError(AoIIError):
    """Exception for invalid inputs or experiment configuration."""


class NumericalError(AoIIError):
    """Exception when a numerical computation cannot be completed."""


class ValidationFailure(AoIIError):
    """Exception when a validation suite reports failures."""


class GeneratorError(ConfigError):
    """Exception for a matrix that is not a valid CTMC generator."""


class NegativeOffDiagonal(GeneratorError):
    """A generator has a negative transition rate."""


class NonzeroRowSum(GeneratorError):
    """A generator row does not sum to zero."""


class AbsorbingState(GeneratorError):
    """A generator has a state with no outgoing rate."""


class Reducible(GeneratorError):
    """A generator is not irreducible."""


class IndexOutOfRange(ConfigError):
    """A state index is outside 1..N."""


class NonMonotoneScript(ConfigError):
    """Scripted event times are not strictly increasing."""


class NotBinary(ConfigError):
    """An operation that requires a two-state source got another size."""


class NonFinite(NumericalError):
    """A computation overflowed or produced NaN."""


class SingularMatrix(NumericalError):
    """A matrix that must be inverted is singular."""


class ConditioningOnNull(NumericalError):
    """Conditioning on an event with (numerically) zero probability."""


class ZeroDiagonal(NumericalError):
    """A subgenerator has a zero diagonal entry."""


class ThresholdAbsorbsAll(NumericalError):
    """The waiting phase absorbs before the threshold almost surely."""


class SingularChain(NumericalError):
    """The synchronization chain has no unique stationary distribution."""


class SingularSystem(NumericalError):
    """The value determination equations are singular."""


class BisectionFailed(NumericalError):
    """The Lagrange multiplier search did not meet the budget tolerance."""


class CalibrationFailed(NumericalError):
    """The Poisson intensity search did not meet the budget tolerance."""


class InfeasibleBudget(NumericalError):
    """No candidate policy satisfies the sampling rate budget."""
