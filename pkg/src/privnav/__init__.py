"""Privacy-preserving multi-camera navigation: secret-shared inference over a toy driving world."""

__version__ = "0.1.0"

from .errors import ConfigError, DivergenceError, MissingArtifactError, PrivNavError, ProtocolError, RangeError
from .mpc import Engine
from .ring import DEFAULT_FIXED, FixedConfig, FixedVec, decode_fixed, encode_fixed

__all__ = [
    "ConfigError", "DEFAULT_FIXED", "DivergenceError", "Engine", "FixedConfig", "FixedVec", "MissingArtifactError",
    "PrivNavError", "ProtocolError", "RangeError", "__version__", "decode_fixed", "encode_fixed",
]
