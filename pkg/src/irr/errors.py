"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, everything else -> 4.
"""


class IrrError(Exception):
    """Base class for all package errors."""


class ConfigError(IrrError):
    """Invalid configuration key, value, or cross-field constraint."""


class DataError(IrrError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """Unparseable input file; carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CapacityError(DataError):
    """A dedup group exceeds the level capacity K."""


class DimensionError(IrrError):
    """Operand shapes are incompatible for an operation."""


class ContractError(IrrError):
    """An operation was invoked in a way that violates its contract."""
