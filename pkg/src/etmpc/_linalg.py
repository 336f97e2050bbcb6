"""Small dense factorization kernels with explicit pivot-magnitude checks.

Sizes here are the active-set dimension (at most m*N), so plain loops over
pivots with vectorized row updates are plenty fast.  Both kernels raise
RankDeficient when a pivot falls below ``rtol`` times the matrix max norm.
"""

from __future__ import annotations

import numpy as np

from .errors import RankDeficient

_PIVOT_RTOL = 1e-10


def gauss_jordan_inverse(M: np.ndarray, rtol: float = _PIVOT_RTOL) -> np.ndarray:
    """Explicit inverse by Gauss-Jordan elimination with partial pivoting."""
    M = np.asarray(M, dtype=float)
    s = M.shape[0]
    if s == 0:
        return np.zeros((0, 0))
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny)
    aug = np.hstack([M.copy(), np.eye(s)])
    for k in range(s):
        piv = k + int(np.argmax(np.abs(aug[k:, k])))
        if abs(aug[piv, k]) < rtol * scale:
            raise RankDeficient(
                f"pivot {abs(aug[piv, k]):.3e} below {rtol:.1e} * norm at column {k}"
            )
        if piv != k:
            aug[[k, piv]] = aug[[piv, k]]
        aug[k] /= aug[k, k]
        for i in range(s):
            if i != k and aug[i, k] != 0.0:
                aug[i] -= aug[i, k] * aug[k]
    return aug[:, s:]


def lu_factor(M: np.ndarray, rtol: float = _PIVOT_RTOL):
    """LU decomposition with partial pivoting, returned compactly.

    Returns (LU, perm) where LU packs the unit-lower and upper factors and
    perm maps factor rows back to rows of M.
    """
    M = np.asarray(M, dtype=float)
    s = M.shape[0]
    LU = M.copy()
    perm = np.arange(s)
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny) if s else 1.0
    for k in range(s):
        piv = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[piv, k]) < rtol * scale:
            raise RankDeficient(
                f"pivot {abs(LU[piv, k]):.3e} below {rtol:.1e} * norm at column {k}"
            )
        if piv != k:
            LU[[k, piv]] = LU[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        LU[k + 1:, k] /= LU[k, k]
        if k + 1 < s:
            LU[k + 1:, k + 1:] -= np.outer(LU[k + 1:, k], LU[k, k + 1:])
    return LU, perm


def lu_solve(LU: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Forward/backward substitution for one or more right-hand-side columns."""
    s = LU.shape[0]
    b = np.asarray(rhs, dtype=float)
    single = b.ndim == 1
    if s == 0:
        return b.copy()
    X = b.reshape(s, -1)[perm].copy()
    for k in range(s):          # forward, unit lower triangle
        X[k + 1:] -= np.outer(LU[k + 1:, k], X[k])
    for k in range(s - 1, -1, -1):  # backward
        X[k] /= LU[k, k]
        X[:k] -= np.outer(LU[:k, k], X[k])
    return X[:, 0] if single else X
