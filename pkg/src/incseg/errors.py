"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class GenerationExhausted(RuntimeError):
    """Rejection sampling ran out of attempts while building a dataset."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable, truncated, or of an unknown version."""


class ConfigError(ValueError):
    """A run configuration file or flag set is malformed."""
