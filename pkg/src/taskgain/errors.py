"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A config file or CLI argument is malformed or inconsistent."""


class NumericalError(RuntimeError):
    """A linear-algebra step left the supported regime (conditioning, PSD)."""
