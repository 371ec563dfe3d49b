"""Exception types shared across the package."""


class PrivNavError(Exception):
    pass


class RangeError(PrivNavError, ValueError):
    """A real value cannot be represented in the fixed-point ring encoding."""


class ConfigError(PrivNavError, ValueError):
    pass


class ProtocolError(PrivNavError, RuntimeError):
    """Misuse of the sharing protocol: missing shares, reused or exhausted randomness."""


class DivergenceError(PrivNavError, FloatingPointError):
    pass


class MissingArtifactError(PrivNavError, FileNotFoundError):
    pass
