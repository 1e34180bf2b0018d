"""
Global floating-point precision switch.

Gradient checks run in 64-bit, training defaults to 32-bit. The initial mode comes
from the SHREDLAB_PRECISION environment variable ("f32" or "f64").
"""

import os

import numpy as np

from .errors import ConfigError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_current = os.environ.get("SHREDLAB_PRECISION", "f32")
if _current not in _DTYPES:
    raise ConfigError(f"SHREDLAB_PRECISION must be one of {sorted(_DTYPES)}, got {_current!r}")


def set_precision(mode: str) -> None:
    """Switch every subsequently created array to the given precision."""
    global _current
    if mode not in _DTYPES:
        raise ConfigError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    _current = mode


def get_precision() -> str:
    return _current


def get_dtype() -> type:
    return _DTYPES[_current]
