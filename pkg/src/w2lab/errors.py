"""Error types shared across the package.

The CLI maps these onto process exit codes, so library code raises them
instead of bare ValueErrors whenever the failure is a user-facing condition.
"""


class ConfigError(ValueError):
    """Invalid configuration: unknown dataset kind, bad schedule bounds, ..."""


class DivergenceError(RuntimeError):
    """Training or sampling produced a non-finite state."""
