"""Convolution kernel backends.

Two interchangeable implementations of the three primitive kernels that
dominate runtime (cross-correlation forward, gradient w.r.t. input,
gradient w.r.t. filters):

* ``numba`` -- explicit loops compiled with ``@njit`` (default when numba
  imports cleanly),
* ``numpy`` -- pure-numpy fallback built from strided slices and BLAS
  matmuls.

Select explicitly with the environment variable ``PBGAN_BACKEND=numba`` or
``PBGAN_BACKEND=numpy`` (read once, at import time).  Both backends are
deterministic; results agree to floating-point roundoff but are not
required to match bitwise across backends.
"""

import os

from . import numpy_backend

_requested = os.environ.get("PBGAN_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"PBGAN_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_backend
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_filters = _impl.conv2d_grad_filters

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_grad_input",
    "conv2d_grad_filters",
    "numpy_backend",
]
