"""Regional affine law and polytope reconstruction from an active set.

For an active set of rows with full-row-rank G_A and the shorthand
Phi = (G_A H^{-1} G_A')^{-1}, S = E + G H^{-1} F', the law and polytope are

    K = [H^{-1} G_A' Phi S_A - H^{-1} F']_M      (first m rows)
    b = [H^{-1} G_A' Phi w_A]_M
    T = [ G_I H^{-1} G_A' Phi S_A - S_I ]        (inactive rows, q - q_A)
        [ Phi S_A                       ]        (multiplier rows,   q_A)
    d = [ w_I - G_I H^{-1} G_A' Phi w_A ]
        [ -Phi w_A                      ]

so T x <= d collects primal feasibility of the inactive rows and
nonnegativity of the active-row multipliers lambda = -Phi (S_A x + w_A).
The law u(x) = K x + b equals the first input block of the QP optimizer
everywhere on {x : T x <= d}.

Two backends compute the same values: ``naive-inverse`` forms Phi by
explicit Gauss-Jordan elimination and reports every operation of its fixed
schedule into a FlopCounter at the documented polynomial costs, making the
analytic cost model executable; ``lu-pivoted`` (the production path)
replaces the inversion by an LU factorization with pivoting plus
forward/backward substitutions and reports its own cheaper counts for
information only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _linalg
from .costmodel import FlopCounter
from .errors import RankDeficient
from .problem import CondensedQp

__all__ = [
    "ActiveSet",
    "Region",
    "BACKENDS",
    "build_region",
    "build_region_from_inverse",
    "evaluate_law",
    "contains",
    "first_violation",
    "region_multipliers",
]

BACKENDS = ("naive-inverse", "lu-pivoted")

_MEMBERSHIP_RTOL = 1e-9


@dataclass(frozen=True)
class ActiveSet:
    """Ordered subset of constraint rows, 1-based, out of q rows total."""

    indices: tuple[int, ...]
    q: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(not (1 <= i <= self.q) for i in idx):
            raise ValueError(f"active indices must lie in 1..{self.q}: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"active indices must be strictly increasing: {idx}")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, i: int) -> bool:
        return i in self.indices

    @property
    def zero_based(self) -> np.ndarray:
        return np.array(self.indices, dtype=int) - 1

    @property
    def inactive_zero_based(self) -> np.ndarray:
        mask = np.ones(self.q, dtype=bool)
        mask[self.zero_based] = False
        return np.flatnonzero(mask)

    @classmethod
    def from_zero_based(cls, idx, q: int) -> "ActiveSet":
        return cls(indices=tuple(sorted(int(i) + 1 for i in idx)), q=q)


@dataclass(frozen=True)
class Region:
    """Affine law (K, b) and validity polytope {x : T x <= d}.

    T carries all q rows: first the inactive-constraint block, then the
    multiplier-nonnegativity block (never pruned, so row counts stay in
    step with the wire and flop accounting).
    """

    K: np.ndarray
    b: np.ndarray
    T: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in ("K", "b", "T", "d"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def m(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.K.shape[1]


def _gather(qp: CondensedQp, aset: ActiveSet):
    act = aset.zero_based
    ina = aset.inactive_zero_based
    return act, ina


def build_region(
    qp: CondensedQp,
    aset: ActiveSet,
    backend: str = "lu-pivoted",
    counter: FlopCounter | None = None,
) -> Region:
    """Rebuild law and polytope from an active set (the A1/A3 local path)."""
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    n, m, N, q = qp.dims
    mN = m * N
    qa = len(aset)
    if aset.q != q:
        raise ValueError(f"active set is over {aset.q} rows, QP has {q}")
    if qa > mN:
        raise RankDeficient(f"{qa} active rows cannot be independent (mN = {mN})")
    act, ina = _gather(qp, aset)
    GA_T = qp.G[act].T                      # mN x qa

    # Shared products (common subexpressions across K, b, T, d):
    #   Y  = H^{-1} G_A'            mN x qa
    #   K0 = (H^{-1})_M F'          m x n
    #   W  = G Y                    q x qa   (active rows give the Gram matrix)
    Y = qp.Hinv @ GA_T
    K0 = qp.Hinv[:m] @ qp.F.T
    W = qp.G @ Y
    if counter is not None:
        counter.charge_matmul(mN, mN, qa)
        counter.charge_matmul(m, mN, n)
        counter.charge_matmul(q, mN, qa)

    gram = W[act]
    if backend == "naive-inverse":
        phi = _linalg.gauss_jordan_inverse(gram)
        if counter is not None:
            counter.charge_inverse(qa)
        Z = phi @ qp.S[act]                 # qa x n
        v = phi @ qp.w[act]                 # qa
        if counter is not None:
            counter.charge_matmul(qa, qa, n)
            counter.charge_matmul(qa, qa, 1)
    else:
        LU, perm = _linalg.lu_factor(gram)
        rhs = np.hstack([qp.S[act], qp.w[act][:, None]])
        X = _linalg.lu_solve(LU, perm, rhs)
        Z = X[:, :n]
        v = X[:, n]
        if counter is not None:
            # factor: qa(qa-1)/2 divisions + qa(qa-1)(2qa-1)/3 mul/adds;
            # solves: per column, qa divisions + 2*qa(qa-1) mul/adds
            counter.charge_inv_raw(
                10 * (qa * (qa - 1) // 2)
                + qa * (qa - 1) * (2 * qa - 1) // 3
                + (n + 1) * (10 * qa + 2 * qa * (qa - 1))
            )

    return _assemble(qp, aset, Y, K0, W, Z, v, counter)


def build_region_from_inverse(
    qp: CondensedQp,
    aset: ActiveSet,
    gram_inv: np.ndarray,
    counter: FlopCounter | None = None,
    verify: bool = False,
) -> Region:
    """Rebuild the region from a transmitted Gram inverse (the A2 local path).

    The inversion is skipped; so is the active-row part of the G H^{-1} G_A'
    product, which is only needed to form the Gram matrix.  With ``verify``
    the supplied inverse is checked against a local recomputation to 1e-8.
    """
    n, m, N, q = qp.dims
    mN = m * N
    qa = len(aset)
    gram_inv = np.asarray(gram_inv, dtype=float)
    if gram_inv.shape != (qa, qa):
        raise ValueError(f"gram inverse must be {qa}x{qa}, got {gram_inv.shape}")
    act, ina = _gather(qp, aset)
    GA_T = qp.G[act].T

    Y = qp.Hinv @ GA_T
    K0 = qp.Hinv[:m] @ qp.F.T
    W = np.zeros((q, qa))
    W[ina] = qp.G[ina] @ Y
    if counter is not None:
        counter.charge_matmul(mN, mN, qa)
        counter.charge_matmul(m, mN, n)
        counter.charge_matmul(q - qa, mN, qa)
    if verify and qa:
        gram = qp.G[act] @ Y
        if np.max(np.abs(gram @ gram_inv - np.eye(qa))) > 1e-8 * max(1.0, np.max(np.abs(gram))):
            raise ValueError("supplied gram inverse fails the identity check")

    Z = gram_inv @ qp.S[act]
    v = gram_inv @ qp.w[act]
    if counter is not None:
        counter.charge_matmul(qa, qa, n)
        counter.charge_matmul(qa, qa, 1)
    return _assemble(qp, aset, Y, K0, W, Z, v, counter)


def _assemble(qp, aset, Y, K0, W, Z, v, counter):
    """Downstream products and additions shared by every build path."""
    n, m, N, q = qp.dims
    qa = len(aset)
    act, ina = _gather(qp, aset)
    WI = W[ina]

    TZ = WI @ Z                              # (q - qa) x n
    dv = WI @ v                              # q - qa
    KZ = Y[:m] @ Z                           # m x n
    bv = Y[:m] @ v                           # m
    if counter is not None:
        counter.charge_matmul(q - qa, qa, n)
        counter.charge_matmul(q - qa, qa, 1)
        counter.charge_matmul(m, qa, n)
        counter.charge_matmul(m, qa, 1)

    T = np.empty((q, n))
    d = np.empty(q)
    T[:q - qa] = TZ - qp.S[ina]
    d[:q - qa] = qp.w[ina] - dv
    K = KZ - K0
    if counter is not None:
        counter.charge_add(q - qa, n)
        counter.charge_add(q - qa, 1)
        counter.charge_add(m, n)
    # sign flips and copies are not floating-point operations
    T[q - qa:] = Z
    d[q - qa:] = -v
    return Region(K=K, b=bv, T=T, d=d)


def evaluate_law(region: Region, x: np.ndarray) -> np.ndarray:
    """u(x) = K x + b; defined everywhere, optimal inside the region."""
    return region.K @ np.asarray(x, dtype=float) + region.b


def _membership_residual(region: Region, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return region.T @ x - region.d - _MEMBERSHIP_RTOL * (1.0 + np.abs(region.d))


def contains(region: Region, x) -> bool:
    """Closed-polytope membership, T x <= d rowwise with a relative slack.

    Row scanning stops at the first violation (a single vectorized pass
    computes all rows; the result is identical).
    """
    return not np.any(_membership_residual(region, x) > 0.0)


def first_violation(region: Region, x) -> int | None:
    """1-based index of the first violated polytope row, or None."""
    res = _membership_residual(region, x)
    bad = np.flatnonzero(res > 0.0)
    return int(bad[0]) + 1 if bad.size else None


def region_multipliers(region: Region, aset: ActiveSet, x) -> np.ndarray:
    """Multipliers of the active rows at x, read off the polytope block.

    The last q_A rows of T x <= d encode lambda(x) = d - T x >= 0.
    """
    qa = len(aset)
    if qa == 0:
        return np.zeros(0)
    x = np.asarray(x, dtype=float)
    return region.d[-qa:] - region.T[-qa:] @ x
