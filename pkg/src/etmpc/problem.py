"""MPC problem definition, validation, and condensation to a dense QP.

The finite-horizon problem

    min  x(N)'P x(N) + sum_{k=0}^{N-1} x(k)'Q x(k) + u(k)'R u(k)
    s.t. x(k+1) = A x(k) + B u(k),   x(0) given,
         u_lo <= u(k) <= u_hi,       k = 0..N-1,
         x_lo <= x(k) <= x_hi,       k = 0..N-1,
         t_lo <= x(N) <= t_hi,

is condensed over the stacked input sequence U = (u(0)', ..., u(N-1)')'
into

    min_U  1/2 U'H U + x'F U    s.t.  G U - E x <= w,

dropping a U-independent quadratic in x.  Constraint rows follow a fixed
documented order so that active-set indices mean the same thing on every
node:

    rows 1        .. mN         input upper bounds, stage 0..N-1
    rows mN+1     .. 2mN        input lower bounds
    rows 2mN+1    .. 2mN+nN     state upper bounds, stage 0..N-1
    rows 2mN+nN+1 .. 2mN+2nN    state lower bounds
    rows +1       .. +n         terminal upper bounds
    rows +n+1     .. +2n        terminal lower bounds

giving q = 2mN + 2nN + 2n rows in total.  Row indices are 1-based in all
public interfaces.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DareDivergence, ValidationError

__all__ = [
    "MpcProblem",
    "CondensedQp",
    "ValidationReport",
    "validate",
    "solve_dare",
    "discretize_zoh",
    "condense",
    "load_problem",
    "bundled_problem_names",
]

_DARE_TOL = 1e-10
_DARE_MAX_ITER = 10_000


def _as_matrix(a, rows, cols, name):
    m = np.asarray(a, dtype=float)
    if m.shape != (rows, cols):
        raise ValidationError([f"{name} must have shape {(rows, cols)}, got {m.shape}"])
    return m


def _as_vector(a, length, name):
    v = np.asarray(a, dtype=float).reshape(-1)
    if v.shape != (length,):
        raise ValidationError([f"{name} must have length {length}, got {v.shape}"])
    return v


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class MpcProblem:
    """Design-time description of one MPC problem.

    ``P=None`` requests the terminal weight as the solution of the
    discrete-time algebraic Riccati equation for (A, B, Q, R).
    ``t_lo``/``t_hi`` default to the state box.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    P: np.ndarray | None = None
    t_lo: np.ndarray | None = None
    t_hi: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError(["A must be a square matrix"])
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1)
        if B.shape[0] != n:
            raise ValidationError([f"B must have {n} rows, got {B.shape}"])
        m = B.shape[1]
        Q = _as_matrix(self.Q, n, n, "Q")
        R = _as_matrix(self.R, m, m, "R")
        P = self.P
        if P is None:
            P = solve_dare(A, B, Q, R)
        else:
            P = _as_matrix(P, n, n, "P")
        x_lo = _as_vector(self.x_lo, n, "x_lo")
        x_hi = _as_vector(self.x_hi, n, "x_hi")
        u_lo = _as_vector(self.u_lo, m, "u_lo")
        u_hi = _as_vector(self.u_hi, m, "u_hi")
        t_lo = x_lo.copy() if self.t_lo is None else _as_vector(self.t_lo, n, "t_lo")
        t_hi = x_hi.copy() if self.t_hi is None else _as_vector(self.t_hi, n, "t_hi")
        _freeze(A, B, Q, R, P, x_lo, x_hi, u_lo, u_hi, t_lo, t_hi)
        for f, v in [
            ("A", A), ("B", B), ("Q", Q), ("R", R), ("P", P),
            ("x_lo", x_lo), ("x_hi", x_hi), ("u_lo", u_lo), ("u_hi", u_hi),
            ("t_lo", t_lo), ("t_hi", t_hi), ("N", int(self.N)),
        ]:
            object.__setattr__(self, f, v)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.ok


def _is_symmetric(M, tol=1e-9):
    return np.max(np.abs(M - M.T)) <= tol * max(1.0, np.max(np.abs(M)))


def _hautus_stabilizable(A, B, tol=1e-9):
    """PBH test: rank [A - lam*I, B] == n for every eigenvalue with |lam| >= 1."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - 1e-9:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        s = np.linalg.svd(pencil, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            return False
    return True


def validate(problem: MpcProblem) -> ValidationReport:
    """Check every problem invariant; returns a report instead of raising."""
    bad: list[str] = []
    A, B, Q, R, P = problem.A, problem.B, problem.Q, problem.R, problem.P
    if not _is_symmetric(Q):
        bad.append("Q is not symmetric")
    elif np.min(np.linalg.eigvalsh(Q)) < -1e-9:
        bad.append("Q is not positive semidefinite")
    if not _is_symmetric(R):
        bad.append("R is not symmetric")
    elif np.min(np.linalg.eigvalsh(R)) <= 1e-12:
        bad.append("R is not positive definite")
    if not _is_symmetric(P):
        bad.append("P is not symmetric")
    elif np.min(np.linalg.eigvalsh(P)) <= 1e-12:
        bad.append("P is not positive definite")
    if not _hautus_stabilizable(A, B):
        bad.append("(A, B) is not stabilizable")
    if problem.N <= 1:
        bad.append("horizon must exceed 1")
    for name, lo, hi in [
        ("state box", problem.x_lo, problem.x_hi),
        ("input box", problem.u_lo, problem.u_hi),
        ("terminal box", problem.t_lo, problem.t_hi),
    ]:
        if not (np.all(lo < 0.0) and np.all(hi > 0.0)):
            bad.append(f"{name} must contain the origin in its interior")
    return ValidationReport(ok=not bad, violations=tuple(bad))


def _dare_rhs(A, B, Q, R, P):
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    return A.T @ P @ A - A.T @ P @ B @ K + Q


def dare_residual(A, B, Q, R, P) -> float:
    """Max-norm residual of the Riccati fixed point at P."""
    A, B, Q, R, P = (np.asarray(M, dtype=float) for M in (A, B, Q, R, P))
    return float(np.max(np.abs(P - _dare_rhs(A, B, Q, R, P))))


def solve_dare(A, B, Q, R) -> np.ndarray:
    """Stabilizing DARE solution by fixed-point iteration of the Riccati recursion.

    Starts from P = Q and iterates until the fixed-point residual drops below
    1e-10 in max norm; raises DareDivergence after 10 000 iterations.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(A.shape[0], -1)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = Q.copy()
    for _ in range(_DARE_MAX_ITER):
        Pn = _dare_rhs(A, B, Q, R, P)
        Pn = 0.5 * (Pn + Pn.T)
        if np.max(np.abs(Pn - P)) <= 0.1 * _DARE_TOL and dare_residual(A, B, Q, R, Pn) <= _DARE_TOL:
            return Pn
        P = Pn
    raise DareDivergence(
        f"DARE divergence: residual {dare_residual(A, B, Q, R, P):.3e} "
        f"after {_DARE_MAX_ITER} iterations"
    )


def _expm(M: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring of a Taylor series.

    The series is truncated once the next term falls below 1e-20 of the
    running sum, and the input is scaled so its max norm is at most 0.5;
    the squaring then keeps the overall error comfortably below 1e-12.
    """
    M = np.asarray(M, dtype=float)
    norm = np.max(np.abs(M)) * M.shape[0]
    s = 0
    while norm > 0.5:
        norm /= 2.0
        s += 1
    Ms = M / (2.0 ** s)
    result = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 64):
        term = term @ Ms / k
        result = result + term
        if np.max(np.abs(term)) <= 1e-20 * max(1.0, np.max(np.abs(result))):
            break
    for _ in range(s):
        result = result @ result
    return result


def discretize_zoh(A_cont, B_cont, Ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    A_cont = np.asarray(A_cont, dtype=float)
    B_cont = np.asarray(B_cont, dtype=float)
    if B_cont.ndim == 1:
        B_cont = B_cont.reshape(A_cont.shape[0], -1)
    n, m = B_cont.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_cont
    aug[:n, n:] = B_cont
    E = _expm(aug * Ts)
    return E[:n, :n].copy(), E[:n, n:].copy()


@dataclass(frozen=True)
class CondensedQp:
    """Dense QP data with the derived matrix S = E + G H^{-1} F' and cached H^{-1}."""

    H: np.ndarray
    F: np.ndarray
    G: np.ndarray
    E: np.ndarray
    w: np.ndarray
    S: np.ndarray
    Hinv: np.ndarray
    dims: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    @property
    def n(self) -> int:
        return self.dims[0]

    @property
    def m(self) -> int:
        return self.dims[1]

    @property
    def N(self) -> int:
        return self.dims[2]

    @property
    def q(self) -> int:
        return self.dims[3]


def _prediction_matrices(A, B, N):
    """Stacked maps X = Gamma U + Omega x for X = (x(1)', ..., x(N)')'."""
    n, m = B.shape
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    Omega = np.vstack([powers[k] for k in range(1, N + 1)])
    Gamma = np.zeros((n * N, m * N))
    for k in range(1, N + 1):          # block row for x(k)
        for j in range(k):             # input u(j), j < k
            Gamma[(k - 1) * n:k * n, j * m:(j + 1) * m] = powers[k - 1 - j] @ B
    return Gamma, Omega, powers


def condense(problem: MpcProblem) -> CondensedQp:
    """Condense the MPC problem into the dense QP over the input sequence."""
    report = validate(problem)
    if not report.ok:
        raise ValidationError(report.violations)
    A, B, Q, R, P, N = problem.A, problem.B, problem.Q, problem.R, problem.P, problem.N
    n, m = problem.n, problem.m
    Gamma, Omega, powers = _prediction_matrices(A, B, N)

    Qbar = np.zeros((n * N, n * N))
    for k in range(N - 1):
        Qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = Q
    Qbar[(N - 1) * n:, (N - 1) * n:] = P
    Rbar = np.kron(np.eye(N), R)

    H = 2.0 * (Gamma.T @ Qbar @ Gamma + Rbar)
    H = 0.5 * (H + H.T)
    F = 2.0 * (Omega.T @ Qbar @ Gamma)

    # Stage-state maps x(k) = C[k] U + A^k x, with C[0] = 0.
    C = [np.zeros((n, m * N))] + [Gamma[(k - 1) * n:k * n, :] for k in range(1, N + 1)]

    q = 2 * m * N + 2 * n * N + 2 * n
    G = np.zeros((q, m * N))
    E = np.zeros((q, n))
    w = np.zeros(q)
    row = 0
    # input upper / lower bounds
    for k in range(N):
        G[row:row + m, k * m:(k + 1) * m] = np.eye(m)
        w[row:row + m] = problem.u_hi
        row += m
    for k in range(N):
        G[row:row + m, k * m:(k + 1) * m] = -np.eye(m)
        w[row:row + m] = -problem.u_lo
        row += m
    # state upper / lower bounds, stages 0..N-1
    for k in range(N):
        G[row:row + n] = C[k]
        E[row:row + n] = -powers[k]
        w[row:row + n] = problem.x_hi
        row += n
    for k in range(N):
        G[row:row + n] = -C[k]
        E[row:row + n] = powers[k]
        w[row:row + n] = -problem.x_lo
        row += n
    # terminal bounds
    G[row:row + n] = C[N]
    E[row:row + n] = -powers[N]
    w[row:row + n] = problem.t_hi
    row += n
    G[row:row + n] = -C[N]
    E[row:row + n] = powers[N]
    w[row:row + n] = -problem.t_lo
    row += n
    assert row == q

    # Cache the inverse through a Cholesky factorization; this also certifies
    # H > 0 before anything downstream relies on it.
    L = np.linalg.cholesky(H)
    Hinv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(m * N)))
    Hinv = 0.5 * (Hinv + Hinv.T)
    S = E + G @ Hinv @ F.T

    _freeze(H, F, G, E, w, S, Hinv)
    return CondensedQp(H=H, F=F, G=G, E=E, w=w, S=S, Hinv=Hinv, dims=(n, m, N, q))


# -- problem definition files -------------------------------------------------

_MATRIX_KEYS = {"A", "B", "A_cont", "B_cont", "Q", "R", "P"}
_VECTOR_KEYS = {"x_lo", "x_hi", "u_lo", "u_hi", "t_lo", "t_hi"}
_PROBLEM_DIR_ENV = "ETMPC_PROBLEM_DIR"


def _data_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "data")


def bundled_problem_names() -> list[str]:
    return sorted(
        f[:-4] for f in os.listdir(_data_dir()) if f.endswith(".txt")
    )


def _resolve_problem_path(name: str) -> str:
    if os.path.exists(name):
        return name
    candidates = [name, name + ".txt"]
    search = []
    env_dir = os.environ.get(_PROBLEM_DIR_ENV)
    if env_dir:
        search.append(env_dir)
    search.append(_data_dir())
    for d in search:
        for c in candidates:
            p = os.path.join(d, c)
            if os.path.exists(p):
                return p
    raise FileNotFoundError(
        f"no problem file named {name!r} (searched {search}; "
        f"bundled: {', '.join(bundled_problem_names())})"
    )


def _matrix_rows(key, n, m):
    shapes = {
        "A": (n, n), "A_cont": (n, n), "B": (n, m), "B_cont": (n, m),
        "Q": (n, n), "R": (m, m), "P": (n, n),
    }
    return shapes[key]


def load_problem(name_or_path: str) -> MpcProblem:
    """Parse a problem definition file.

    Format: one ``key value...`` pair per line; matrix keys stand alone on a
    line and are followed by their row-major rows.  A ``ts`` key marks the
    A/B blocks (``A_cont``/``B_cont``) as continuous-time and triggers
    zero-order-hold discretization on load.  ``P dare`` (or omitting P)
    requests the Riccati terminal weight.  ``#`` starts a comment.
    """
    path = _resolve_problem_path(name_or_path)
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.readlines()
    lines = []
    for ln in raw_lines:
        ln = ln.split("#", 1)[0].strip()
        if ln:
            lines.append(ln)

    scalars: dict[str, str] = {}
    vectors: dict[str, np.ndarray] = {}
    matrices: dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        key = parts[0]
        if key in _MATRIX_KEYS and len(parts) == 1:
            if "n" not in scalars or "m" not in scalars:
                raise ValueError(f"{path}: n and m must be declared before matrix {key}")
            rows, cols = _matrix_rows(key, int(scalars["n"]), int(scalars["m"]))
            block = lines[i + 1:i + 1 + rows]
            if len(block) < rows:
                raise ValueError(f"{path}: matrix {key} needs {rows} rows")
            mat = np.array([[float(v) for v in r.split()] for r in block])
            if mat.shape != (rows, cols):
                raise ValueError(f"{path}: matrix {key} must be {rows}x{cols}, got {mat.shape}")
            matrices[key] = mat
            i += 1 + rows
        elif key in _VECTOR_KEYS:
            vectors[key] = np.array([float(v) for v in parts[1:]])
            i += 1
        else:
            scalars[key] = " ".join(parts[1:]) if len(parts) > 1 else ""
            i += 1

    n, m, N = int(scalars["n"]), int(scalars["m"]), int(scalars["N"])
    ts = float(scalars["ts"]) if "ts" in scalars else None
    if ts is not None:
        A, B = discretize_zoh(matrices["A_cont"], matrices["B_cont"], ts)
    else:
        A, B = matrices["A"], matrices["B"]
    P = matrices.get("P")
    if scalars.get("P", "").strip().lower() == "dare":
        P = None
    return MpcProblem(
        A=A, B=B, Q=matrices["Q"], R=matrices["R"], P=P, N=N,
        x_lo=vectors["x_lo"], x_hi=vectors["x_hi"],
        u_lo=vectors["u_lo"], u_hi=vectors["u_hi"],
        t_lo=vectors.get("t_lo"), t_hi=vectors.get("t_hi"),
        name=scalars.get("name", os.path.splitext(os.path.basename(path))[0]),
    )
