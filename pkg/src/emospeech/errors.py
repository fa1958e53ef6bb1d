"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or inconsistent."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
