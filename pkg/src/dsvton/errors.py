"""Exception taxonomy shared across the package.

ValidationError maps to CLI exit code 1, NumericalError to exit code 2.
"""


class ValidationError(ValueError):
    """Bad configuration, shapes, ranges, or file contents."""


class NumericalError(RuntimeError):
    """Non-finite values or numerically unsafe operations."""
