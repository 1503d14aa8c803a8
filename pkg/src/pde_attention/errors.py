"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes, so the taxonomy stays coarse:
configuration problems, stability-guard refusals, runtime divergence, and
degenerate fields (rows whose mass has been destroyed).
"""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent combination of options."""


class StabilityError(ConfigError):
    """A step size violates the CFL bound while the stability guard is on."""

    def __init__(self, message: str, max_dt: float):
        super().__init__(message)
        self.max_dt = max_dt


class DivergenceError(RuntimeError):
    """Evolution or training produced NaN/Inf or an exploding field."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DegenerateFieldError(ValueError):
    """A row lost all (or negative) mass, e.g. before renormalization."""
