"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the operation."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class ContractError(RuntimeError):
    """A call violates an operation precondition that is not a shape issue."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointError(ValueError):
    """Checkpoint container is malformed, truncated or of the wrong version."""


class DivergenceError(RuntimeError):
    """Loss became non-finite during optimization."""
