"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value (or derived size) is invalid."""


class InputError(ValueError):
    """Caller-supplied data violates a precondition."""


class UsageError(RuntimeError):
    """An API was called in an invalid state."""


class CapacityError(ValueError):
    """More ground-truth points than proposals."""


class InvariantError(RuntimeError):
    """An internal invariant was broken; indicates a bug."""


class CheckpointError(RuntimeError):
    """Checkpoint cannot be read or does not match the configuration."""
