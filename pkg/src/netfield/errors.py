"""Exception classes mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Configuration violates the published schema (exit code 2)."""


class NumericalError(RuntimeError):
    """A numerical procedure aborted: divergence, non-convergence,
    unusable acceptance rate, NaN detection (exit code 3)."""
