"""Exception types shared across the package."""


class NumericFailure(RuntimeError):
    """A numerical procedure did not converge or produced an invalid result.

    ``details`` carries whatever diagnostics the failing routine had at hand
    (bracketing intervals, step sizes, envelope ratios, ...).
    """

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def __str__(self):
        base = super().__str__()
        if not self.details:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in self.details.items())
        return f"{base} ({extra})"


class ConfigError(ValueError):
    """Invalid user-supplied parameters or configuration."""
