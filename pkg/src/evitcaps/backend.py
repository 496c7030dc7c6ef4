"""Kernel backend selection.

The hot 3D-convolution kernels exist twice: a numba @njit build and a pure
numpy fallback.  The env var EVITCAPS_BACKEND picks one ("numba" | "numpy");
default is numba when importable, numpy otherwise.
"""

import os

from .errors import ConfigurationError

_requested = os.environ.get("EVITCAPS_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ConfigurationError(
        f"EVITCAPS_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import _kernels_numpy as _impl
    _name = "numpy"
elif _requested == "numba":
    from . import _kernels_numba as _impl
    _name = "numba"
else:
    try:
        from . import _kernels_numba as _impl
        _name = "numba"
    except ImportError:
        from . import _kernels_numpy as _impl
        _name = "numpy"

conv3d_forward = _impl.conv3d_forward
conv3d_grad_input = _impl.conv3d_grad_input
conv3d_grad_weight = _impl.conv3d_grad_weight


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _name
