"""Analytic bit/flop accounting for the four law-transmission variants.

Conventions: a scalar multiply or add costs one flop, a divide costs ten.
Real numbers on the wire cost BITS_PER_REAL = 16 bits each.  The per-variant
downlink payloads are

    A1  the active-set indicator (one bit per constraint row),
    A2  the indicator plus the inverse of the active-row Gram matrix,
    A3  the full optimal input sequence,
    A4  the regional law and polytope matrices K, b, T, d.

All formulas are exact integer/rational polynomials in the problem
dimensions; nothing here is measured or floating-point.  The matching
operation schedule lives in ``region`` and reports into ``FlopCounter`` so
that the predictions double as an executable check of that schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

__all__ = [
    "VARIANTS",
    "BITS_PER_REAL",
    "INV_MAT_RATIO_BOUND",
    "Dims",
    "CostReport",
    "FlopCounter",
    "op_flops",
    "matmul_flops",
    "add_flops",
    "inverse_flops",
    "predicted_bits",
    "predicted_flops",
    "split_flops",
    "check_ratio_bound",
    "compare_encodings",
    "sweep_reports",
]

VARIANTS = ("A1", "A2", "A3", "A4")
BITS_PER_REAL = 16
INV_MAT_RATIO_BOUND = Fraction(18, 79)


@dataclass(frozen=True)
class Dims:
    """Problem dimensions plus an active-constraint count.

    ``q_active`` must not exceed min(q, m*N): the active-row submatrix can
    have at most m*N independent rows.
    """

    n: int
    m: int
    N: int
    q: int
    q_active: int = 0

    def __post_init__(self):
        if min(self.n, self.m) < 1 or self.N < 2 or self.q < 1:
            raise ValueError(f"invalid dims {self}")
        if not (0 <= self.q_active <= min(self.q, self.m * self.N)):
            raise ValueError(
                f"q_active={self.q_active} outside 0..min(q, mN)="
                f"{min(self.q, self.m * self.N)}"
            )

    @classmethod
    def box(cls, n: int, m: int, N: int, q_active: int = 0) -> "Dims":
        """Dims for a box-constrained problem, where q = 2mN + 2nN + 2n."""
        return cls(n=n, m=m, N=N, q=2 * m * N + 2 * n * N + 2 * n, q_active=q_active)

    def with_active(self, q_active: int) -> "Dims":
        return Dims(self.n, self.m, self.N, self.q, q_active)

    @property
    def is_box(self) -> bool:
        return self.q == 2 * self.m * self.N + 2 * self.n * self.N + 2 * self.n


def matmul_flops(rows: int, inner: int, cols: int) -> int:
    """Cost of an (rows x inner) @ (inner x cols) product: rows*cols*(2*inner - 1).

    The formula is applied verbatim even for inner == 0, where it goes
    negative; those degenerate charges cancel against the addition charges
    of the surrounding schedule and keep the polynomial accounting exact.
    """
    return rows * cols * (2 * inner - 1)


def add_flops(rows: int, cols: int = 1) -> int:
    """Cost of an elementwise add/subtract/scale of an (rows x cols) array."""
    return rows * cols


def inverse_flops(s: int) -> int:
    """Cost of inverting an s x s matrix: (2s^3 + 18s^2 + 10s) / 3.

    Equals s(s+1)/2 divisions (at ten flops each) plus s(s-1)(2s+5)/3
    multiply/adds, the count of a Gaussian elimination schedule.
    """
    num = 2 * s**3 + 18 * s**2 + 10 * s
    assert num % 3 == 0
    return num // 3


def op_flops(kind: str, *shape: int) -> int:
    """Cost of one matrix operation; kinds: add, scale, matmul, inverse."""
    if kind in ("add", "scale"):
        rows, cols = (shape + (1,))[:2]
        return add_flops(rows, cols)
    if kind == "matmul":
        return matmul_flops(*shape)
    if kind == "inverse":
        (s,) = shape
        return inverse_flops(s)
    raise ValueError(f"unknown operation kind {kind!r}")


def predicted_bits(variant: str, dims: Dims) -> int:
    """Exact downlink payload size in semantic bits for one event."""
    lam = BITS_PER_REAL
    n, m, N, q, qa = dims.n, dims.m, dims.N, dims.q, dims.q_active
    if variant == "A1":
        return q
    if variant == "A2":
        return lam * (qa * qa + qa) // 2 + q
    if variant == "A3":
        return lam * m * N
    if variant == "A4":
        return lam * (m * n + m + q * n + q)
    raise ValueError(f"unknown variant {variant!r}")


def _cubic_tail(qa: int) -> int:
    # (2/3)qa^3 + 6qa^2 + (7/3)qa, always an integer
    num = 2 * qa**3 + 18 * qa**2 + 7 * qa
    assert num % 3 == 0
    return num // 3


def predicted_flops(variant: str, dims: Dims) -> int:
    """Exact flop count on the local node to rebuild law and polytope."""
    n, m, N, q, qa = dims.n, dims.m, dims.N, dims.q, dims.q_active
    mN = m * N
    if variant == "A1":
        return (
            (mN * qa + m * n + q * qa) * (2 * mN - 1)
            + (q * n + q + m + m * n) * (2 * qa - 1)
            + _cubic_tail(qa)
            + q * n + q - qa * n + m * n
        )
    if variant == "A2":
        return (
            (mN * qa + m * n + q * qa - qa * qa) * (2 * mN - 1)
            + (q * n + q + m + m * n) * (2 * qa - 1)
            + q * n + q - qa * n - qa + m * n
        )
    if variant == "A3":
        return (
            (mN * qa + m * n + q * qa + q) * (2 * mN - 1)
            + (q * n + q + m + m * n) * (2 * qa - 1)
            + _cubic_tail(qa)
            + 3 * q * n + 2 * q - qa * n + m * n
        )
    if variant == "A4":
        return 0
    raise ValueError(f"unknown variant {variant!r}")


def split_flops(dims: Dims) -> tuple[int, int]:
    """Split the A1 flop count into (inversion, all other matrix operations).

    The inversion part is the cubic ``inverse_flops(q_active)``; the rest is
    affine in q_active, alpha*q_active + beta, with

        alpha = (mN + q)(2mN - 1) - n - 1 + 2m + 2mn + 2qn + 2q
        beta  = -m + mn(2mN - 1)

    and the two parts sum exactly to ``predicted_flops("A1", dims)``.
    """
    n, m, N, q, qa = dims.n, dims.m, dims.N, dims.q, dims.q_active
    mN = m * N
    inv = inverse_flops(qa)
    alpha = (mN + q) * (2 * mN - 1) - n - 1 + 2 * m + 2 * m * n + 2 * q * n + 2 * q
    beta = -m + m * n * (2 * mN - 1)
    mat = alpha * qa + beta
    return inv, mat


def inv_mat_ratio(dims: Dims) -> Fraction:
    """Exact ratio of inversion flops to all other flops (0 when no inversion)."""
    inv, mat = split_flops(dims)
    if inv == 0:
        return Fraction(0)
    return Fraction(inv, mat)


@dataclass(frozen=True)
class CostReport:
    """One sweep point of the cost model."""

    variant: str
    dims: Dims
    bits: int
    flops: int
    flops_inv: int
    flops_mat: int
    ratio: Fraction

    def __post_init__(self):
        if self.variant == "A1":
            assert self.flops == self.flops_inv + self.flops_mat
        if self.variant == "A4":
            assert self.flops == 0


def cost_report(variant: str, dims: Dims) -> CostReport:
    bits = predicted_bits(variant, dims)
    flops = predicted_flops(variant, dims)
    if variant in ("A1", "A3"):
        inv = inverse_flops(dims.q_active)
        mat = flops - inv
    else:
        inv, mat = 0, flops
    ratio = Fraction(inv, mat) if mat else Fraction(0)
    return CostReport(variant=variant, dims=dims, bits=bits, flops=flops,
                      flops_inv=inv, flops_mat=mat, ratio=ratio)


def sweep_reports(dims: Dims) -> list[CostReport]:
    """Cost reports for every variant at every q_active in 0..mN."""
    out = []
    for qa in range(min(dims.q, dims.m * dims.N) + 1):
        d = dims.with_active(qa)
        for v in VARIANTS:
            out.append(cost_report(v, d))
    return out


@dataclass(frozen=True)
class RatioBoundReport:
    holds: bool
    monotone: bool
    max_ratio: Fraction
    argmax: Dims | None
    violations: tuple[Dims, ...]


def check_ratio_bound(dims_range) -> RatioBoundReport:
    """Sweep q_active over 0..mN for each box dims and check the 18/79 bound.

    Also checks that the ratio is nondecreasing in q_active along each line.
    """
    best: Fraction = Fraction(0)
    argmax = None
    violations = []
    monotone = True
    for base in dims_range:
        prev = Fraction(-1)
        for qa in range(base.m * base.N + 1):
            d = base.with_active(qa)
            r = inv_mat_ratio(d)
            if r > INV_MAT_RATIO_BOUND:
                violations.append(d)
            if r < prev:
                monotone = False
            prev = r
            if r > best:
                best, argmax = r, d
    return RatioBoundReport(
        holds=not violations, monotone=monotone, max_ratio=best,
        argmax=argmax, violations=tuple(violations),
    )


@dataclass(frozen=True)
class EncodingComparison:
    """Direct bit comparisons plus the two sufficient-threshold predictions.

    ``a3_gt_a1_threshold`` is the test (lam - 2)/3 > n/m, which guarantees
    bits(A3) > bits(A1) for box constraints; ``a3_gt_a2_threshold`` adds the
    q_active-dependent term lam*q_active*(q_active+1)/(6mN) on the right.
    A threshold that holds with equality makes no prediction.
    """

    dims: Dims
    bits: dict = field(default_factory=dict)
    a1_le_a2: bool = True
    a4_dominates: dict = field(default_factory=dict)
    a3_gt_a1_threshold: bool | None = None
    a3_gt_a1_direct: bool = False
    a3_gt_a1_agrees: bool | None = None
    a3_gt_a2_threshold: bool | None = None
    a3_gt_a2_direct: bool = False
    a3_gt_a2_agrees: bool | None = None


def compare_encodings(dims: Dims) -> EncodingComparison:
    """Compare per-event bit counts of all variants at the given dims."""
    lam = BITS_PER_REAL
    bits = {v: predicted_bits(v, dims) for v in VARIANTS}
    lhs = Fraction(lam - 2, 3)
    rhs1 = Fraction(dims.n, dims.m)
    rhs2 = rhs1 + Fraction(lam * dims.q_active * (dims.q_active + 1), 6 * dims.m * dims.N)
    thr1 = None if lhs == rhs1 else lhs > rhs1
    thr2 = None if lhs == rhs2 else lhs > rhs2
    direct1 = bits["A3"] > bits["A1"]
    direct2 = bits["A3"] > bits["A2"]
    return EncodingComparison(
        dims=dims,
        bits=bits,
        a1_le_a2=bits["A1"] <= bits["A2"],
        a4_dominates={v: bits[v] <= bits["A4"] for v in ("A1", "A2", "A3")},
        a3_gt_a1_threshold=thr1,
        a3_gt_a1_direct=direct1,
        # the threshold is sufficient only: agreement is checked when it holds
        a3_gt_a1_agrees=(direct1 if thr1 else None),
        a3_gt_a2_threshold=thr2,
        a3_gt_a2_direct=direct2,
        a3_gt_a2_agrees=(direct2 if thr2 else None),
    )


class FlopCounter:
    """Tally of operation costs, split into inversion vs other matrix work.

    The regional-law builders report every matrix operation of their
    schedule here at its ``op_flops`` cost; the totals must reconcile
    exactly with ``split_flops`` / ``predicted_flops`` for the counted
    schedules (the LU backend reports for information only).
    """

    def __init__(self):
        self.inv = 0
        self.mat = 0

    def charge_inverse(self, s: int) -> None:
        self.inv += inverse_flops(s)

    def charge_matmul(self, rows: int, inner: int, cols: int) -> None:
        self.mat += matmul_flops(rows, inner, cols)

    def charge_add(self, rows: int, cols: int = 1) -> None:
        self.mat += add_flops(rows, cols)

    def charge_inv_raw(self, flops: int) -> None:
        """Raw charge into the inversion bucket (LU backend's factor/solve work)."""
        self.inv += flops

    @property
    def total(self) -> int:
        return self.inv + self.mat

    def reset(self) -> None:
        self.inv = 0
        self.mat = 0

    def snapshot(self) -> tuple[int, int]:
        return self.inv, self.mat
