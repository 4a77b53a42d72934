"""Exception taxonomy shared across the library.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NonFiniteError / DivergenceError -> 4.
"""


class DimensionError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf from finite inputs."""


class ConfigError(ValueError):
    """A configuration value is invalid; the message names the field path."""


class DataError(ValueError):
    """A dataset, sample, or input file is missing or malformed."""


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries the offending batch ids."""

    def __init__(self, message, epoch=None, batch_ids=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_ids = list(batch_ids) if batch_ids else []


class UndefinedMetricError(ZeroDivisionError):
    """A metric's denominator is zero; distinct from the metric being 0."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint persistence failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint file is truncated or structurally invalid."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint contents do not match the target model; names the field."""
