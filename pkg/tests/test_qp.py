import numpy as np
import pytest

from etmpc.errors import Infeasible
from etmpc.qp import identify_active_set, is_feasible, solve
from etmpc.verify import enumeration_solve

from conftest import random_problem
from etmpc.problem import condense


def kkt_check(qp, x, sol):
    f = qp.F.T @ x
    b = qp.w + qp.E @ x
    act = sol.active.zero_based
    grad = qp.H @ sol.u_star + f
    if len(act):
        grad = grad + qp.G[act].T @ sol.multipliers
    assert np.max(np.abs(grad)) <= 1e-8, "stationarity"
    assert np.max(qp.G @ sol.u_star - b) <= 1e-8, "primal feasibility"
    if len(act):
        assert np.max(np.abs(qp.G[act] @ sol.u_star - b[act])) <= 1e-7, "complementarity"
        assert np.min(sol.multipliers) >= -1e-10, "dual feasibility"


def test_origin_unconstrained(four_mass_qp):
    sol = solve(four_mass_qp, np.zeros(8))
    assert np.max(np.abs(sol.u_star)) < 1e-12
    assert sol.active.indices == ()
    assert sol.multipliers.size == 0


def test_tiny_chain_saturation_region(tiny_chain_qp):
    # unconstrained law u0 = -0.6 x saturates u0 >= -1 for x > 5/3; the lower
    # bound of u(0) is row mN+1 = 3 in the documented ordering
    sol = solve(tiny_chain_qp, np.array([1.8]))
    assert sol.active.indices == (3,)
    assert abs(sol.u_star[0] + 1.0) < 1e-10


def test_solver_matches_enumeration_on_tiny_chain(tiny_chain_qp):
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(25):
        x = rng.uniform(-4.0, 4.0, size=1)
        oracle = enumeration_solve(tiny_chain_qp, x)
        if oracle is None:
            continue
        sol = solve(tiny_chain_qp, x)
        assert np.max(np.abs(sol.u_star - oracle[0])) < 1e-8
        assert sol.active.indices == oracle[1]
        checked += 1
    assert checked >= 20


def test_kkt_invariants_four_mass(four_mass, four_mass_qp):
    rng = np.random.default_rng(9)
    solved = 0
    while solved < 25:
        x = rng.uniform(four_mass.x_lo, four_mass.x_hi) * 0.6
        try:
            sol = solve(four_mass_qp, x)
        except Infeasible:
            continue
        kkt_check(four_mass_qp, x, sol)
        solved += 1


def test_objective_descends_across_iterations(four_mass, four_mass_qp):
    rng = np.random.default_rng(13)
    seen_multi_step = 0
    for _ in range(15):
        x = rng.uniform(four_mass.x_lo, four_mass.x_hi) * 0.5
        if not is_feasible(four_mass_qp, x):
            continue
        sol = solve(four_mass_qp, x)
        trace = np.array(sol.objective_trace)
        if trace.size >= 2:
            seen_multi_step += 1
            assert np.all(np.diff(trace) <= 1e-9 * (1 + np.abs(trace[:-1])))
    assert seen_multi_step >= 3


def test_resolve_is_bit_identical(four_mass_qp):
    x = np.array([1.0, -0.5, 0.3, 0.2, -1.1, 0.7, 0.0, 0.4])
    a = solve(four_mass_qp, x)
    b = solve(four_mass_qp, x)
    assert np.array_equal(a.u_star, b.u_star)
    assert a.active.indices == b.active.indices
    assert np.array_equal(a.multipliers, b.multipliers)


def test_infeasible_state_raises(four_mass, four_mass_qp):
    # a state pinned to the box corner with large same-sign velocities cannot
    # be kept inside the box with |u| <= 0.5
    x = np.array([4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0]) * 0.999
    assert not is_feasible(four_mass_qp, x)
    with pytest.raises(Infeasible):
        solve(four_mass_qp, x)


def test_warm_start_returns_same_solution(four_mass, four_mass_qp):
    rng = np.random.default_rng(17)
    found = 0
    while found < 5:
        x = rng.uniform(four_mass.x_lo, four_mass.x_hi) * 0.6
        if not is_feasible(four_mass_qp, x):
            continue
        cold = solve(four_mass_qp, x)
        if not cold.active.indices:
            continue
        warm = solve(four_mass_qp, x, warm_start=cold.active)
        assert np.max(np.abs(warm.u_star - cold.u_star)) < 1e-9
        assert warm.active.indices == cold.active.indices
        found += 1


def test_q_active_never_exceeds_mn(four_mass, four_mass_qp):
    rng = np.random.default_rng(21)
    mN = 30
    solved = 0
    while solved < 20:
        x = rng.uniform(four_mass.x_lo, four_mass.x_hi)
        try:
            sol = solve(four_mass_qp, x)
        except Infeasible:
            continue
        assert len(sol.active) <= mN
        solved += 1


def test_random_problems_match_enumeration():
    rng = np.random.default_rng(23)
    checked = 0
    while checked < 8:
        p = random_problem(rng, n=1, m=1, N=2)
        qp = condense(p)
        x = rng.uniform(p.x_lo, p.x_hi)
        oracle = enumeration_solve(qp, x)
        if oracle is None:
            continue
        sol = solve(qp, x)
        assert np.max(np.abs(sol.u_star - oracle[0])) < 1e-8
        checked += 1


# -- identify_active_set ---------------------------------------------------------

def test_identify_interior_point_is_empty(four_mass_qp):
    sol = solve(four_mass_qp, np.zeros(8))
    aset = identify_active_set(four_mass_qp, sol.u_star, np.zeros(8))
    assert aset.indices == ()


def test_identify_single_facet(tiny_chain_qp):
    x = np.array([1.8])
    sol = solve(tiny_chain_qp, x)
    aset = identify_active_set(tiny_chain_qp, sol.u_star, x)
    assert aset.indices == (3,)


def test_identify_threshold_is_closed(tiny_chain_qp):
    # residual exactly at eps_active must be included
    qp = tiny_chain_qp
    x = np.zeros(1)
    eps = 1e-7
    U = np.zeros(2)
    resid = qp.G @ U - qp.E @ x - qp.w
    target_row = 0
    # move U along the row gradient until that row's residual equals -eps... 0:
    g = qp.G[target_row]
    U = U + g * (qp.w[target_row] - eps) / (g @ g)
    resid = qp.G[target_row] @ U - qp.E[target_row] @ x - qp.w[target_row]
    assert abs(resid + eps) < 1e-15
    aset = identify_active_set(qp, U, x, eps_active=eps)
    assert target_row + 1 in aset


def test_identify_matches_solver_set(four_mass, four_mass_qp):
    rng = np.random.default_rng(29)
    agreed = 0
    while agreed < 10:
        x = rng.uniform(four_mass.x_lo, four_mass.x_hi) * 0.6
        if not is_feasible(four_mass_qp, x):
            continue
        sol = solve(four_mass_qp, x)
        aset = identify_active_set(four_mass_qp, sol.u_star, x)
        # identification sees every solver row; weak extras are possible but
        # the solver's strictly-active rows must all be recovered
        assert set(sol.active.indices) <= set(aset.indices)
        agreed += 1
