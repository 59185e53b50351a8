"""Dense float64 matrix kernels: products, SVD pseudo-inverse, least squares.

Everything here is a pure function on validated 2-d float64 arrays. Heavy
lifting is delegated to numpy's LAPACK bindings; reductions inside a single
build of numpy are deterministic, which is what the reproducibility contract
of the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

DEFAULT_PINV_TOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-d float64 array, rejecting NaN/Inf and empties."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def pseudo_inverse(a, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values at or below tol * max(singular value) are treated as
    exactly zero, so rank-deficient inputs (including the all-zero matrix)
    degrade gracefully.
    """
    a = as_matrix(a, "a")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    cutoff = tol * s[0]
    inv = np.where(s > cutoff, 1.0, 0.0)
    # guard the masked divide: zeroed entries never touch 1/s
    inv = inv / np.where(s > cutoff, s, 1.0)
    return (vt.T * inv) @ u.T


def effective_rank(a, tol: float = DEFAULT_PINV_TOL) -> int:
    """Number of singular values above the relative cutoff."""
    a = as_matrix(a, "a")
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def ols_fit(x, y) -> np.ndarray:
    """Least-squares coefficients minimizing ||y - X b||^2.

    Rank-deficient designs resolve to the minimum-norm solution through the
    pseudo-inverse, which keeps any identified coefficients well defined.
    """
    x = as_matrix(x, "x")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"y must be a vector, got shape {y.shape}")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: x has {x.shape[0]} rows, y has {y.shape[0]}")
    if x.shape[0] < x.shape[1]:
        raise ValueError("underdetermined system: need rows >= cols")
    return pseudo_inverse(x) @ y
