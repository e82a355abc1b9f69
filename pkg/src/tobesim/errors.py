"""Exception types shared across the package."""


class DomainError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ConfigError(ValueError):
    """Raised when an experiment config file is malformed or inconsistent."""
