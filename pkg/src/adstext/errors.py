"""Exception types shared across the package."""


class AdstextError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(AdstextError):
    """Malformed or contract-violating input data."""


class NumericsError(AdstextError):
    """Shape mismatch, non-finite values, or other numeric-kernel failures."""
