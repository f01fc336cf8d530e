"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An operand has the wrong rank or an extent that does not match."""


class NumericError(ValueError):
    """An operand contains values the operation cannot handle (NaN, bad dtype)."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class StateError(RuntimeError):
    """A stateful component was used before its state was initialised."""


class DataError(RuntimeError):
    """A dataset file or directory could not be ingested."""


class CheckpointError(RuntimeError):
    """A checkpoint file is truncated, corrupt, or has an unknown version."""
