"""Pure numpy implementations of the hot loops.

Used when the compiled ``_kernels`` extension is unavailable or when
``POQM_PURE_PYTHON`` is set. Every function matches its compiled twin
bit-for-bit on the comparison-based kernels (``measure_product``,
``sample_categorical``, ``rows_equal``); the dense kernels agree to
floating-point rounding.
"""

import numpy as np

SNAP = 1e-12


def apply_1q(amps, n, q, u):
    view = amps.reshape(1 << q, 2, 1 << (n - 1 - q))
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :].copy()
    view[:, 0, :] = u[0, 0] * a0 + u[0, 1] * a1
    view[:, 1, :] = u[1, 0] * a0 + u[1, 1] * a1


def prob_zero(amps, n, q):
    view = amps.reshape(1 << q, 2, 1 << (n - 1 - q))
    half = view[:, 0, :]
    return float(np.sum(half.real ** 2 + half.imag ** 2))


def collapse_drop(amps, n, q, bit):
    view = amps.reshape(1 << q, 2, 1 << (n - 1 - q))
    out = np.ascontiguousarray(view[:, bit, :]).reshape(-1)
    norm = np.sqrt(np.sum(out.real ** 2 + out.imag ** 2))
    if norm > 0.0:
        out = out / norm
    return out


def measure_product(phi, angle, u):
    p0 = np.cos(phi - angle) ** 2
    p0 = np.where(p0 > 1.0 - SNAP, 1.0, np.where(p0 < SNAP, 0.0, p0))
    return (u >= p0).astype(np.uint8)


def sample_categorical(probs, u):
    cum = np.cumsum(probs, axis=1)
    cum = cum / cum[:, -1:]
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1).astype(np.int64)


def rows_equal(a, b):
    return np.all(a == b, axis=1)
