"""Nullspace projection of class-proxy directions out of feature space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClassProxyMatrix
from .linalg import DEFAULT_PINV_TOL, as_matrix, effective_rank, pseudo_inverse


@dataclass(frozen=True)
class ProjectionOperator:
    """Symmetric idempotent matrix sending every proxy direction to zero."""

    pi: np.ndarray  # (d, d)
    source_rank: int  # effective rank of the proxy matrix it was built from


def build_projection(z: ClassProxyMatrix | np.ndarray, tol: float = DEFAULT_PINV_TOL) -> ProjectionOperator:
    """Projector onto the orthogonal complement of the proxy row space.

    Rows are L2-normalized first; the row space (hence the projector) is
    scale invariant, but normalization conditions the Gram inverse. Rank
    deficiency, e.g. duplicate proxies, is absorbed by the pseudo-inverse.
    """
    rows = z.proxies if isinstance(z, ClassProxyMatrix) else z
    rows = as_matrix(rows, "proxies")
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("proxy row with zero norm")
    zn = rows / norms
    d = zn.shape[1]
    gram = zn @ zn.T
    pi = np.eye(d) - zn.T @ pseudo_inverse(gram, tol) @ zn
    pi = 0.5 * (pi + pi.T)
    return ProjectionOperator(pi=pi, source_rank=effective_rank(zn, tol))


def project_features(op: ProjectionOperator, x: np.ndarray) -> np.ndarray:
    """Apply the projector row-wise to a batch of feature vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != op.pi.shape[1]:
        raise ValueError(f"dimension mismatch: features have {x.shape[1]} dims, operator expects {op.pi.shape[1]}")
    return x @ op.pi.T
