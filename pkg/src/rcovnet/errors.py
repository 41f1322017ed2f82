"""Exception hierarchy shared across the package."""


class RcovError(Exception):
    """Base class for all package errors."""


class NumericalError(RcovError):
    """A numerical routine could not produce a valid result."""


class NotPositiveDefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NonFiniteLikelihood(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class DataError(RcovError):
    """Input data is inconsistent with what an operation requires."""


class DimensionMismatch(DataError, ValueError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class SeriesTooShort(DataError):
    pass


class EmptySplit(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class InvalidDegreesOfFreedom(RcovError, ValueError):
    pass


class ConfigError(RcovError):
    """Malformed or inconsistent experiment configuration."""
