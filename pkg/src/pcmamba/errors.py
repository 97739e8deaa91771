"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input data violates a precondition (non-finite coords, too few points, ...)."""


class ConfigurationError(ValueError):
    """Model or layer configuration is internally inconsistent."""


class NumericRangeError(ArithmeticError):
    """A computation left the representable floating-point range."""


class ContractViolationError(ValueError):
    """An operation was called outside its documented contract."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given input (e.g. fewer than 2 points)."""


class DegenerateLabelsError(ValueError):
    """A classification task was given fewer than 2 distinct labels."""


class ParseError(ValueError):
    """A text file could not be parsed; carries the offending line number."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class FormatError(ValueError):
    """A binary file does not conform to the expected layout."""
