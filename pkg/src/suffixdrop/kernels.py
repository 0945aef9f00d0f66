"""Matrix-multiply kernel lanes.

Two interchangeable implementations of the same operation:

* ``compiled`` -- Cython extension (suffixdrop._matmul), float64 accumulator
  per cell, shared index ascending.
* ``numpy``    -- pure NumPy loop over the shared dimension, accumulating
  rank-1 updates into a float64 buffer in the same ascending order.

Both round to float32 once at the end.  Because float32 products are exact
in float64 and the per-cell addition sequences coincide, the lanes return
bit-identical results; the compiled lane is just faster.  Selection happens
at import: the extension when available, else the NumPy lane.  Set
``SUFFIXDROP_KERNEL=numpy`` or ``SUFFIXDROP_KERNEL=compiled`` to force one.
"""

import os

import numpy as np

try:
    from suffixdrop import _matmul as _ext
except ImportError:
    _ext = None


def matmul_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference lane: k-ascending float64 accumulation of rank-1 updates."""
    m, kk = a.shape
    n = b.shape[1]
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    acc = np.zeros((m, n), dtype=np.float64)
    for p in range(kk):
        acc += a64[:, p, None] * b64[p, None, :]
    return acc.astype(np.float32)


def matmul_compiled(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _ext is None:
        raise RuntimeError("compiled kernel requested but suffixdrop._matmul is not built")
    return _ext.matmul_f32(a, b)


_FORCED = os.environ.get("SUFFIXDROP_KERNEL", "").strip().lower()
if _FORCED == "numpy":
    matmul_impl = matmul_numpy
    BACKEND = "numpy"
elif _FORCED == "compiled":
    matmul_impl = matmul_compiled
    BACKEND = "compiled"
    if _ext is None:
        raise ImportError(
            "SUFFIXDROP_KERNEL=compiled but the suffixdrop._matmul extension is not built"
        )
elif _FORCED:
    raise ImportError(f"unknown SUFFIXDROP_KERNEL value: {_FORCED!r} (use 'compiled' or 'numpy')")
elif _ext is not None:
    matmul_impl = matmul_compiled
    BACKEND = "compiled"
else:
    matmul_impl = matmul_numpy
    BACKEND = "numpy"


def backend() -> str:
    """Name of the active kernel lane: 'compiled' or 'numpy'."""
    return BACKEND


def compiled_available() -> bool:
    return _ext is not None
