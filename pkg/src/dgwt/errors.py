"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input value violates a documented invariant."""


class ConfigurationError(ValueError):
    """A configuration is internally inconsistent or unsupported."""


class FormatError(ValueError):
    """A tensor container file is malformed; the message names the byte offset."""


class NumericalError(ArithmeticError):
    """An iterative routine broke down numerically (underflow or overflow)."""
