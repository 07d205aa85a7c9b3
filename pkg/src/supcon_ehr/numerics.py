"""Numerically stable scalar kernels shared by the losses, encoder and metrics.

Dense containers are plain ``float64`` numpy arrays; a "RealMatrix" here is an
``(rows, cols)`` array and a "RealVector" a 1-D array.  Every kernel accepts
scalars or arrays and works elementwise unless noted.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DegenerateEmbeddingError",
    "as_matrix",
    "as_vector",
    "cosine_sim",
    "log_sigmoid",
    "logsumexp",
    "normalize_rows",
    "sigmoid",
    "softplus",
]


class DegenerateEmbeddingError(ValueError):
    """An embedding with zero norm was passed where a direction is needed."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def sigmoid(x):
    """Logistic function, branch-stable for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    # exp is only ever taken of a non-positive number
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def softplus(x):
    """log(1 + e^x) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out[()] if out.ndim == 0 else out


def log_sigmoid(x):
    """log(sigmoid(x)) = -softplus(-x)."""
    return -softplus(-np.asarray(x, dtype=np.float64))


def logsumexp(xs, axis=None):
    """Max-shifted log-sum-exp.

    With ``axis=None`` the input must be a non-empty vector and a float is
    returned.  ``-inf`` entries are allowed (they act as masked-out terms) as
    long as at least one entry along the reduced axis is finite.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("logsumexp of an empty sequence is undefined")
    if axis is None:
        if xs.size == 1:
            return float(xs.reshape(-1)[0])
        m = np.max(xs)
        return float(m + np.log(np.sum(np.exp(xs - m))))
    m = np.max(xs, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(xs - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def normalize_rows(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Z / ||Z_i||, ||Z_i||)``; raises on any zero-norm row."""
    norms = np.sqrt(np.sum(Z * Z, axis=1))
    bad = np.flatnonzero(~(norms > 0.0))
    if bad.size:
        raise DegenerateEmbeddingError(
            f"embedding rows {bad.tolist()[:10]} have zero norm (collapsed encoder?)"
        )
    return Z / norms[:, None], norms


def cosine_sim(a, b) -> float:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if not (na > 0.0 and nb > 0.0):
        raise DegenerateEmbeddingError("cosine similarity of a zero-norm vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))
