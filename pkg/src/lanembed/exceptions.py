"""Exception hierarchy shared across the package."""


class LanembedError(Exception):
    """Base class for all errors raised by lanembed."""


class DimensionError(LanembedError, ValueError):
    """A requested grid dimension is zero or negative."""


class ShapeError(LanembedError, ValueError):
    """Two arrays that must share a grid do not."""


class DomainError(LanembedError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(LanembedError, ArithmeticError):
    """A computation produced NaN or Inf.

    ``field`` names the offending parameter field when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ConfigError(LanembedError, ValueError):
    """A configuration is invalid or cannot be satisfied."""


class FormatError(LanembedError, ValueError):
    """A serialized file does not match its binary format."""
