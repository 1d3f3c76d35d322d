"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration or command-line input (CLI exit code 2)."""


class NonFiniteError(RuntimeError):
    """A loss or gradient evaluated to NaN/inf.

    Carries enough context (pixel, stroke index, optimizer step) to locate
    the offending value.
    """

    def __init__(self, message, pixel=None, stroke=None, step=None):
        super().__init__(message)
        self.pixel = pixel
        self.stroke = stroke
        self.step = step
