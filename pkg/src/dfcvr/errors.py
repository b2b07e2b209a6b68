"""Shared exception types.

The CLI maps these onto exit codes: configuration and data-format problems
exit with 1, numerical failures with 2.
"""


class DfcvrError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DfcvrError):
    """Invalid configuration value or CLI usage."""


class DataFormatError(DfcvrError):
    """Malformed dataset or checkpoint file, or inconsistent contents."""


class NumericalError(DfcvrError):
    """Numerical failure: divergence, non-convergence, non-finite values."""
