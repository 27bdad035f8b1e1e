"""Exception types shared across the package.

The CLI maps these onto its exit codes (config 2, data 3, numeric 4).
"""


class FreqDropError(Exception):
    """Base class for all package errors."""


class ParameterError(FreqDropError, ValueError):
    """Invalid argument to a kernel generator or sampler."""


class ConfigError(FreqDropError, ValueError):
    """Invalid or inconsistent configuration."""


class ShapeError(FreqDropError, ValueError):
    """Tensor shapes do not line up."""


class NumericError(FreqDropError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class DataError(FreqDropError):
    """Dataset or checkpoint content is malformed."""


class FormatError(DataError):
    """Binary file does not match its declared format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
