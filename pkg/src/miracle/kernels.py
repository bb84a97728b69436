"""Kernel dispatch: the compiled extension when built, else the NumPy fallback.

Set ``MIRACLE_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("MIRACLE_PURE_PYTHON"):
        raise ImportError("fallback forced by MIRACLE_PURE_PYTHON")
    from . import _kernels as _compiled

    BACKEND = "compiled"
except ImportError:
    _compiled = None
    BACKEND = "python"


def _pick(backend):
    if backend is None:
        return _compiled or _kernels_py
    if backend == "python":
        return _kernels_py
    if backend == "compiled" and _compiled is not None:
        return _compiled
    raise ValueError(f"kernel backend {backend!r} unavailable (active: {BACKEND})")


def masked_distances(xq, mq, xr, mr, backend: str | None = None) -> np.ndarray:
    """Mean squared difference over jointly observed coordinates, +inf if none."""
    return _pick(backend).masked_distances(
        np.ascontiguousarray(xq, dtype=np.float64),
        np.ascontiguousarray(mq, dtype=np.int8),
        np.ascontiguousarray(xr, dtype=np.float64),
        np.ascontiguousarray(mr, dtype=np.int8),
    )


def elu_fused(z, backend: str | None = None):
    """(ELU(z), ELU'(z)) with alpha = 1."""
    return _pick(backend).elu_fused(z)
