"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class ConfigError(ValueError):
    """Raised when an experiment configuration fails validation."""


class InvariantViolation(RuntimeError):
    """An internal guarantee was broken; indicates a bug, not bad input."""


class PlacementError(RuntimeError):
    """The placed assembly cannot satisfy the movement-region constraint."""
