"""Exception hierarchy shared by all hpix modules.

The CLI maps these onto process exit codes, so new errors should subclass
one of the four categories below rather than raising bare exceptions.
"""


class HPixError(Exception):
    """Base class for all hpix failures. Exit code 1 unless refined."""

    exit_code = 1


class ConfigError(HPixError):
    """Invalid configuration, flags, or violated call contracts."""

    exit_code = 2


class SpecError(ConfigError):
    """An architecture spec fails its own invariants."""


class DataError(HPixError):
    """Dataset ingestion or unreadable/ill-formed input files."""

    exit_code = 3


class ShapeError(DataError):
    """An array does not have the shape an operation requires."""


class NumericError(HPixError):
    """Non-finite values where finite ones are required."""

    exit_code = 4
