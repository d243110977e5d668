"""Exception types shared across the package.

CLI exit codes: ConfigError -> 2, CapacityError -> 3, NumericalError -> 4.
"""


class QmolgenError(Exception):
    """Base class for package errors."""


class ConfigError(QmolgenError):
    """Invalid configuration file, override, or argument combination."""


class CapacityError(QmolgenError):
    """Requested simulation exceeds a configured memory/branch budget."""


class NumericalError(QmolgenError):
    """Numerical corruption: non-finite values, degenerate probabilities, SVD failure."""


class FormatError(QmolgenError):
    """Malformed serialized artifact (circuit text, batch file, fragment file)."""
