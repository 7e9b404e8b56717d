"""Exception hierarchy shared across the package."""


class MorphparseError(Exception):
    """Base class for all package errors."""


class ParseError(MorphparseError):
    """Malformed input data (CoNLL-U, tag TSV, vector files)."""


class TreeError(MorphparseError):
    """An operation required a valid dependency tree and did not get one."""


class ConfigError(MorphparseError):
    """Invalid or inconsistent configuration."""


class ShapeError(MorphparseError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(MorphparseError):
    """An API precondition was violated by the caller."""


class NumericError(MorphparseError):
    """Non-finite values where finite ones are required."""


class CheckpointError(MorphparseError):
    """Unreadable, corrupted, or incompatible checkpoint file."""
