"""Dense numeric primitives: matmul, row softmax, rotary position encoding.

Storage is float32 row-major; reductions accumulate in float64.  Every
operation is deterministic for a fixed kernel lane (see suffixdrop.kernels),
and everything except matmul is plain NumPy shared by both lanes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from suffixdrop.errors import ShapeError
from suffixdrop.kernels import matmul_impl


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float32 2-D array."""
    m = np.ascontiguousarray(x, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Product of two float32 matrices with pinned accumulation order.

    Equals a naive triple loop (float64 accumulator, shared index ascending)
    bit for bit, regardless of the active kernel lane.
    """
    am = as_matrix(a, "a")
    bm = as_matrix(b, "b")
    if am.shape[1] != bm.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {am.shape} x {bm.shape}")
    return matmul_impl(am, bm)


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with max subtraction, float64 internally."""
    mm = as_matrix(m, "m")
    x = mm.astype(np.float64)
    if x.shape[1] == 0:
        return np.zeros_like(mm)
    x -= x.max(axis=1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=1, keepdims=True)
    return x.astype(np.float32)


@dataclass(frozen=True)
class RotaryTable:
    """Per-pair rotation frequencies for rotary position encoding.

    Pair j couples components (j, j + head_dim/2) and rotates by
    position * base**(-2j/head_dim).  Frequencies decrease strictly
    across pairs.
    """

    head_dim: int
    base: float = 10000.0
    freqs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ShapeError(f"head_dim must be a positive even number, got {self.head_dim}")
        if self.base <= 1.0:
            raise ValueError(f"rotary base must be > 1, got {self.base}")
        exponents = -2.0 * np.arange(self.head_dim // 2, dtype=np.float64) / self.head_dim
        object.__setattr__(self, "freqs", np.power(float(self.base), exponents))

    def angles(self, positions) -> np.ndarray:
        """Rotation angles, shape (len(positions), head_dim/2), float64."""
        pos = np.asarray(positions, dtype=np.float64).reshape(-1)
        return pos[:, None] * self.freqs[None, :]


def rotate_rows(rows, positions, table: RotaryTable) -> np.ndarray:
    """Apply rotary encoding to each row at its absolute position.

    rows: (n, head_dim) float32; positions: n absolute indices.  Angles and
    trig run in float64; the result rounds to float32, preserving row norms
    to well under 1e-6.
    """
    r = as_matrix(rows, "rows")
    if r.shape[1] != table.head_dim:
        raise ShapeError(f"row width {r.shape[1]} != head_dim {table.head_dim}")
    ang = table.angles(positions)
    if ang.shape[0] != r.shape[0]:
        raise ShapeError(f"{r.shape[0]} rows but {ang.shape[0]} positions")
    cos = np.cos(ang)
    sin = np.sin(ang)
    half = table.head_dim // 2
    lo = r[:, :half].astype(np.float64)
    hi = r[:, half:].astype(np.float64)
    out = np.empty_like(r)
    out[:, :half] = (lo * cos - hi * sin).astype(np.float32)
    out[:, half:] = (lo * sin + hi * cos).astype(np.float32)
    return out


def apply_rotary(vec, position: int, table: RotaryTable) -> np.ndarray:
    """Rotate one vector at an absolute position (isometry per pair)."""
    v = np.ascontiguousarray(vec, dtype=np.float32)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if v.shape[0] % 2 != 0:
        raise ShapeError(f"vector length must be even, got {v.shape[0]}")
    return rotate_rows(v[None, :], [position], table)[0]


def rms_norm(rows, eps: float = 1e-6) -> np.ndarray:
    """Row-wise RMS normalization (no learned gain)."""
    r = as_matrix(rows, "rows")
    x = r.astype(np.float64)
    scale = 1.0 / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + eps)
    return (x * scale).astype(np.float32)


def gelu(rows) -> np.ndarray:
    """tanh-approximation GELU, float64 internally."""
    r = as_matrix(rows, "rows")
    x = r.astype(np.float64)
    c = math.sqrt(2.0 / math.pi)
    y = 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))
    return y.astype(np.float32)
