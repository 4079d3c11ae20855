"""Exception types shared across the package."""


class ProtocolError(RuntimeError):
    """An object was used out of order (stepping a finished episode, backward before forward, ...)."""


class NumericError(FloatingPointError):
    """A non-finite value showed up where a finite one is required."""


class FitDegenerateError(ValueError):
    """Not enough informative data to fit a model; callers keep the previous one."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class SeriesParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
