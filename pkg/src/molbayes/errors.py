"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad option values, missing files, digest clashes."""


class DataError(ValueError):
    """Malformed or unusable input data."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required (divergence, bad grads)."""
