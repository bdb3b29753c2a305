"""Exception hierarchy shared across the package.

Every CLI-visible failure maps to one of three exit-code categories:
config (2), data (3), numeric (4). Anything else is an internal bug.
"""


class DeskclipError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DeskclipError):
    """Invalid configuration, preset, or call contract."""

    exit_code = 2


class ShapeError(ConfigError):
    """Tensor dimensions incompatible with the requested operation."""


class ContractError(ConfigError):
    """A documented precondition was violated by the caller."""


class DataError(DeskclipError):
    """Malformed, missing, or inconsistent data."""

    exit_code = 3


class ShardFormatError(DataError):
    """Shard file failed magic/version/structure validation."""


class ChecksumError(DataError):
    """Shard payload does not match its checksum trailer."""


class ContextOverflowError(DataError):
    """A token sequence is longer than the model context window."""


class NumericError(DeskclipError):
    """NaN/Inf or divergence detected during computation."""

    exit_code = 4


class DeterminismError(NumericError):
    """Two forward passes of a supposedly pure function disagreed."""
