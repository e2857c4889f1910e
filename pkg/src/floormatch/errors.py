"""Exception types shared across the package."""


class FloormatchError(Exception):
    """Base class for all package errors."""


class DimensionError(FloormatchError, ValueError):
    """Operand shapes are incompatible with an operation."""


class NumericError(FloormatchError, ArithmeticError):
    """A NaN or Inf appeared in a forward or backward pass."""


class GenerationError(FloormatchError):
    """The synthetic generator could not place a layout."""


class ConfigError(FloormatchError, ValueError):
    """Configuration failed validation.

    ``errors`` holds ``(field, reason)`` tuples.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        msg = "; ".join(f"{f}: {r}" for f, r in self.errors)
        super().__init__(msg)
