"""Exception types shared across the toolkit."""


class AdvRandError(Exception):
    """Base class for every error raised by advrand."""


class DimensionError(AdvRandError, ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(AdvRandError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(AdvRandError, ArithmeticError):
    """A computation produced NaN or infinite values."""


class FormatError(AdvRandError, ValueError):
    """A binary file does not match its declared layout."""


class ConfigError(AdvRandError, ValueError):
    """A configuration file could not be parsed or validated."""
