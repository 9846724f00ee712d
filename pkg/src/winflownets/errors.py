class ConfigError(ValueError):
    """Invalid configuration value or combination of values."""


class NumericError(ArithmeticError):
    """A loss, gradient or parameter went non-finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
