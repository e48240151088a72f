"""Exception hierarchy shared by every subsystem.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4).
"""


class CI2PError(Exception):
    """Base class for all package errors."""


class DimensionError(CI2PError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ContractError(CI2PError, RuntimeError):
    """A precondition of an API call was violated."""


class ConfigError(CI2PError, ValueError):
    """Invalid model or training configuration."""


class NonFiniteError(CI2PError, FloatingPointError):
    """An operation produced NaN or Inf."""


class DataError(CI2PError, IOError):
    """A dataset file is missing or malformed."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt or unreadable."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an unsupported format version."""


class CheckpointCRCError(CheckpointError):
    """Checkpoint payload does not match its trailing CRC32."""
