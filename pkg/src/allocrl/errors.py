"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration errors exit 1,
numeric errors exit 2, and I/O errors (plain OSError) exit 3.
"""


class ConfigurationError(ValueError):
    """Invalid configuration value, file, or command-line usage."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values; the run must abort."""
