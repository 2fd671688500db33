"""Dense vector/matrix primitives every other module builds on.

Matrices are 2-D and vectors 1-D C-contiguous float64 numpy arrays. Public
operations validate finiteness so downstream code can rely on NaN/Inf-free
values. Reductions have a fixed evaluation order per platform, so a given
seed reproduces results bit-for-bit on one machine.
"""

from __future__ import annotations

import numpy as np

from ._backend import kernels
from .errors import NonFiniteValue, ShapeMismatch, ZeroNorm

ZERO_NORM_EPS = 1e-12
LOG_CLAMP = 1e-15


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got {m.ndim}-D")
    if not np.isfinite(m).all():
        raise NonFiniteValue(f"{name} contains NaN/Inf")
    return m


def as_vector(data, name: str = "vector") -> np.ndarray:
    v = np.ascontiguousarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D, got {v.ndim}-D")
    if not np.isfinite(v).all():
        raise NonFiniteValue(f"{name} contains NaN/Inf")
    return v


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit euclidean length, preserving direction."""
    v = as_vector(v)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm <= ZERO_NORM_EPS:
        raise ZeroNorm(f"norm {norm:g} at or below {ZERO_NORM_EPS:g}")
    return v / norm


def softmax(logits) -> np.ndarray:
    """Max-subtracted softmax; stable for any finite input."""
    v = as_vector(logits, "logits")
    if v.size < 1:
        raise ShapeMismatch("softmax needs at least one logit")
    e = np.exp(v - v.max())
    return e / e.sum()


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(
            f"inner dimensions differ: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}")
    return kernels.matmul(a, b)


def stable_log(p: float) -> float:
    """log with the argument clamped to 1e-15, so a zero probability stays finite."""
    if p < 0:
        raise ValueError(f"probability must be >= 0, got {p}")
    return float(np.log(max(p, LOG_CLAMP)))


def row_normalized(m, eps: float = ZERO_NORM_EPS) -> np.ndarray:
    """Each row scaled to unit norm; raises on a degenerate row."""
    m = as_matrix(m)
    norms = np.sqrt((m * m).sum(axis=1))
    if (norms <= eps).any():
        idx = int(np.argmax(norms <= eps))
        raise ZeroNorm(f"row {idx} has norm {norms[idx]:g}")
    return m / norms[:, None]
