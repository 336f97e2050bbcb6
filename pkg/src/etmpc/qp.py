"""Dense primal active-set solver for the condensed strictly convex QP.

Solves  min_U 1/2 U'H U + x'F U  s.t.  G U - E x <= w  at a given state x.
H > 0 makes the optimizer unique; the solver also returns the active set
and its multipliers, which downstream modules turn into a regional law.

A feasible start comes from the unconstrained optimum when that is already
feasible, otherwise from a slack-minimizing phase-one QP solved with the
same machinery.  Weakly active rows (zero multiplier) are pruned from the
reported active set so its rows stay linearly independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateActiveSet, Infeasible
from .problem import CondensedQp
from .region import ActiveSet

__all__ = ["QpSolution", "solve", "identify_active_set", "is_feasible"]

EPS_ACTIVE_DEFAULT = 1e-7
_FEAS_TOL = 1e-8
_MULT_PRUNE = 1e-9
_STEP_TOL = 1e-9
_DEP_TOL = 1e-8
_PHASE1_WEIGHT = 1e9
_PHASE1_TOL = 1e-7


@dataclass(frozen=True)
class QpSolution:
    """Optimizer, active set, and multipliers of one QP solve."""

    u_star: np.ndarray
    active: ActiveSet
    multipliers: np.ndarray
    objective: float
    iterations: int = 0
    objective_trace: tuple[float, ...] = field(default=(), repr=False)


def _solve_kkt(H, GW, rhs_top, rhs_bot):
    """Solve [[H, GW'], [GW, 0]] [p; lam] = [rhs_top; rhs_bot].

    One iterative-refinement pass keeps the absolute error tied to the
    solution scale rather than the right-hand-side scale, which matters for
    the large phase-one gradient.
    """
    d = H.shape[0]
    k = GW.shape[0]
    rhs = np.concatenate([rhs_top, rhs_bot]) if k else rhs_top
    if k == 0:
        KKT = H
    else:
        KKT = np.zeros((d + k, d + k))
        KKT[:d, :d] = H
        KKT[:d, d:] = GW.T
        KKT[d:, :d] = GW
    sol = np.linalg.solve(KKT, rhs)
    sol = sol + np.linalg.solve(KKT, rhs - KKT @ sol)
    return sol[:d], sol[d:] if k else np.zeros(0)


def _independent_of(G, W, candidate, tol=_DEP_TOL) -> bool:
    """Whether row ``candidate`` is numerically independent of G[W]."""
    GW = G[np.array(W, dtype=int)]
    g = G[candidate]
    coeff, *_ = np.linalg.lstsq(GW.T, g, rcond=None)
    resid = g - GW.T @ coeff
    return np.linalg.norm(resid) > tol * max(1.0, np.linalg.norm(g))


def _independent_rows(G, rows, tol=1e-10):
    """Greedily keep rows of G[rows] that increase numerical rank."""
    kept: list[int] = []
    basis = None
    for r in rows:
        g = G[r]
        if basis is None:
            if np.linalg.norm(g) > tol:
                kept.append(r)
                basis = g[None, :] / np.linalg.norm(g)
        else:
            resid = g - (g @ basis.T) @ basis
            nrm = np.linalg.norm(resid)
            if nrm > tol * max(1.0, np.linalg.norm(g)):
                kept.append(r)
                basis = np.vstack([basis, resid / nrm])
        if basis is not None and basis.shape[0] == G.shape[1]:
            break
    return kept


def _primal_active_set(H, f, G, b, U0, W0, max_iter, early_exit=None):
    """Primal active-set iteration from a feasible U0.

    Each pass solves the equality-constrained problem on the working set for
    its minimizer; a full step snaps the iterate onto that minimizer exactly,
    so the next pass sees a zero direction and proceeds to the multiplier
    check.  Returns (U, working_rows, multipliers, iterations, trace).
    ``early_exit(U)`` may stop the iteration early (used by phase one).
    """
    U = U0.astype(float).copy()
    W = list(W0)
    trace: list[float] = []
    zero_steps = 0
    bland = False  # smallest-index anti-cycling rule, enabled on stalling
    row_norms = np.linalg.norm(G, axis=1)
    for it in range(max_iter):
        trace.append(float(0.5 * U @ H @ U + f @ U))
        if early_exit is not None and early_exit(U):
            return U, W, np.zeros(len(W)), it, tuple(trace)
        GW = G[W] if W else np.zeros((0, H.shape[0]))
        try:
            U_eqp, lam = _solve_kkt(H, GW, -f, b[np.array(W, dtype=int)] if W else np.zeros(0))
        except np.linalg.LinAlgError:
            pruned = _independent_rows(G, W)
            if len(pruned) == len(W):
                raise DegenerateActiveSet("singular KKT system with independent working set")
            W = pruned
            continue
        p = U_eqp - U
        if np.max(np.abs(p)) <= _STEP_TOL * (1.0 + np.max(np.abs(U_eqp))):
            if len(W) == 0 or np.min(lam) >= -_MULT_PRUNE:
                return U_eqp, W, lam, it + 1, tuple(trace)
            if bland:
                drop = min(i for i, l in zip(W, lam) if l < -_MULT_PRUNE)
            else:
                worst = np.min(lam)
                drop = min(i for i, l in zip(W, lam) if l <= worst + 1e-14)
            W.remove(drop)
            continue
        # ratio test over rows outside the working set
        mask = np.ones(G.shape[0], dtype=bool)
        if W:
            mask[np.array(W, dtype=int)] = False
        Gp = G[mask] @ p
        slack = b[mask] - G[mask] @ U
        rows = np.flatnonzero(mask)
        alpha = 1.0
        block = None
        # a row blocks only when the direction genuinely points across it;
        # rows nearly dependent on the working set (tiny relative product
        # against step noise) must stay out or G_W turns singular
        step_norm = np.linalg.norm(p)
        pos = np.flatnonzero(Gp > 1e-10 * row_norms[mask] * step_norm)
        while pos.size:
            ratios = np.maximum(slack[pos], 0.0) / Gp[pos]
            j = int(np.argmin(ratios))
            if ratios[j] >= 1.0:
                break
            near = pos[np.flatnonzero(ratios <= ratios[j] + 1e-14)]
            candidate = int(np.min(rows[near]))
            if W and not _independent_of(G, W, candidate):
                pos = pos[rows[pos] != candidate]
                continue
            alpha = float(ratios[j])
            block = candidate
            break
        if block is None:
            U = U_eqp  # full step lands exactly on the subproblem minimizer
        else:
            U = U + alpha * p
            W.append(block)
        if alpha <= 1e-14:
            zero_steps += 1
            if zero_steps >= 6:
                bland = True  # degenerate vertex: fall back to Bland's rule
            if zero_steps > 2 * G.shape[0]:
                raise DegenerateActiveSet("stalled on degenerate vertex")
        else:
            zero_steps = 0
    raise DegenerateActiveSet(f"no convergence after {max_iter} iterations")


def _phase_one(G, b):
    """Feasible point via min 1e9*t + 1/2(|U|^2 + t^2) s.t. GU - t <= b, t >= 0.

    Any feasible U of the original problem bounds the optimum t* by
    |U|^2 / 2e9, far below the feasibility threshold, so t* > 1e-7 certifies
    infeasibility (for the bounded input boxes handled here).
    """
    q, d = G.shape
    t0 = max(0.0, float(np.max(-b, initial=0.0))) + 1.0
    z0 = np.zeros(d + 1)
    z0[d] = t0
    G_aug = np.zeros((q + 1, d + 1))
    G_aug[:q, :d] = G
    G_aug[:q, d] = -1.0
    G_aug[q, d] = -1.0
    b_aug = np.concatenate([b, [0.0]])
    H_aug = np.eye(d + 1)
    f_aug = np.zeros(d + 1)
    f_aug[d] = _PHASE1_WEIGHT
    z, _, _, _, _ = _primal_active_set(
        H_aug, f_aug, G_aug, b_aug, z0, [], max_iter=3 * q + 50,
        early_exit=lambda zc: zc[d] <= 1e-9,
    )
    if z[d] > _PHASE1_TOL:
        raise Infeasible(f"no feasible input sequence (residual violation {z[d]:.3e})")
    return z[:d]


def solve(
    qp: CondensedQp,
    x: np.ndarray,
    warm_start: ActiveSet | None = None,
    eps_active: float = EPS_ACTIVE_DEFAULT,
) -> QpSolution:
    """Solve the condensed QP at state x.

    Raises Infeasible when no input sequence satisfies the constraints and
    DegenerateActiveSet when the working set cannot recover independence.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    f = qp.F.T @ x
    b = qp.w + qp.E @ x
    q = qp.q

    U = -(qp.Hinv @ f)
    slack0 = b - qp.G @ U
    trace: tuple[float, ...] = ()
    iters = 0
    if np.min(slack0) >= -_FEAS_TOL:
        W: list[int] = []
        lam = np.zeros(0)
    else:
        if warm_start is not None:
            W0 = _independent_rows(qp.G, list(warm_start.zero_based))
            try:
                Uw, _ = _solve_kkt(qp.H, qp.G[W0], -f, b[W0])
                feas = np.min(b - qp.G @ Uw) >= -_FEAS_TOL
            except np.linalg.LinAlgError:
                feas = False
            if feas:
                U, W = Uw, W0
            else:
                U = _phase_one(qp.G, b)
                W = _active_start(qp.G, b, U)
        else:
            U = _phase_one(qp.G, b)
            W = _active_start(qp.G, b, U)
        U, W, lam, iters, trace = _primal_active_set(
            qp.H, f, qp.G, b, U, W, max_iter=3 * q + 50
        )

    # polish: one exact equality solve on the final working set
    if W:
        U, lam = _solve_kkt(qp.H, qp.G[W], -f, b[W])
    # prune weakly active rows; their removal keeps the equality system intact
    keep = [(r, l) for r, l in zip(W, lam) if l > _MULT_PRUNE]
    keep.sort()
    active = ActiveSet(indices=tuple(r + 1 for r, _ in keep), q=q)
    multipliers = np.array([l for _, l in keep])
    objective = float(0.5 * U @ qp.H @ U + f @ U)
    return QpSolution(
        u_star=U, active=active, multipliers=multipliers,
        objective=objective, iterations=iters, objective_trace=trace,
    )


def _active_start(G, b, U):
    slack = b - G @ U
    cand = [int(i) for i in np.flatnonzero(slack <= _FEAS_TOL)]
    return _independent_rows(G, cand)


def identify_active_set(
    qp: CondensedQp,
    u_star: np.ndarray,
    x: np.ndarray,
    eps_active: float = EPS_ACTIVE_DEFAULT,
    counter=None,
) -> ActiveSet:
    """Rows with |G_i U - E_i x - w_i| <= eps_active (closed threshold).

    This is the A3 local step: the receiving node recomputes constraint
    residuals from the transmitted input sequence.  The optional counter is
    charged for the two matrix-vector products and two subtractions.
    """
    u_star = np.asarray(u_star, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    resid = qp.G @ u_star - qp.E @ x - qp.w
    if counter is not None:
        n, m, N, q = qp.dims
        counter.charge_matmul(q, m * N, 1)
        counter.charge_matmul(q, n, 1)
        counter.charge_add(q, 1)
        counter.charge_add(q, 1)
    idx = np.flatnonzero(np.abs(resid) <= eps_active)
    return ActiveSet.from_zero_based(idx, qp.q)


def is_feasible(qp: CondensedQp, x: np.ndarray) -> bool:
    """Phase-one feasibility test at state x (no full solve)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    b = qp.w + qp.E @ x
    U = -(qp.Hinv @ (qp.F.T @ x))
    if np.min(b - qp.G @ U) >= -_FEAS_TOL:
        return True
    if np.min(b) >= 0.0:  # zero input is feasible
        return True
    try:
        _phase_one(qp.G, b)
        return True
    except Infeasible:
        return False
    except DegenerateActiveSet:
        return False
