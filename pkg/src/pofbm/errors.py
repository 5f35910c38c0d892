"""Exception hierarchy.

Numerical failures derive from ``NumericalError`` so the CLI can map them to
a single exit code; configuration problems derive from ``ConfigError``.
"""


class NumericalError(ArithmeticError):
    pass


class NegativeSpectrum(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class NonFiniteWeight(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    pass


class AllWeightsDegenerate(NumericalError):
    pass


class DimensionMismatch(ValueError):
    pass


class OddLength(ValueError):
    pass


class UnsupportedDiffusion(ValueError):
    pass


class InvalidRates(ValueError):
    pass


class MissingLevel(ValueError):
    pass


class InsufficientPoints(ValueError):
    pass


class ConfigError(ValueError):
    pass


class MalformedCSV(ConfigError):
    pass


class NonContiguousTime(MalformedCSV):
    pass
