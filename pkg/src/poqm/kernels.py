"""Kernel backend selection.

The compiled extension is preferred; set ``POQM_PURE_PYTHON=1`` to force the
numpy fallback. ``BACKEND`` names the backend that was loaded.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if not os.environ.get("POQM_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"


def backends():
    """Return the available backend modules keyed by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


apply_1q = _impl.apply_1q
prob_zero = _impl.prob_zero
collapse_drop = _impl.collapse_drop


def measure_product(phi, angle, u):
    """Sample computational-basis outcomes of real single-qubit states.

    Each qubit is ``cos(phi)|0> + sin(phi)|1>`` and is measured in the basis
    rotated by ``angle``; outcome 0 has probability ``cos^2(phi - angle)``.
    ``angle`` broadcasts against ``phi``; ``u`` holds uniforms of the same
    shape as ``phi``.
    """
    phi = np.asarray(phi, dtype=np.float64)
    shape = phi.shape
    phi = np.ascontiguousarray(phi.reshape(shape[0] if phi.ndim else 1, -1))
    angle = np.ascontiguousarray(np.broadcast_to(angle, shape), dtype=np.float64).reshape(phi.shape)
    u = np.ascontiguousarray(u, dtype=np.float64).reshape(phi.shape)
    return _impl.measure_product(phi, angle, u).reshape(shape)


def sample_categorical(probs, u):
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    return _impl.sample_categorical(probs, u)


def rows_equal(a, b):
    """Row-wise equality of two ``(T, n)`` bit arrays."""
    a = np.ascontiguousarray(a, dtype=np.uint8)
    b = np.ascontiguousarray(b, dtype=np.uint8)
    return _impl.rows_equal(a, b)
