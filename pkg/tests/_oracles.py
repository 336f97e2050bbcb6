"""Independent reference computations the tests check the library against.

Everything here recomputes results from first principles (explicit rollouts,
fine-step integration, exhaustive enumeration) and never calls the code path
it is used to verify.
"""

import numpy as np


def rollout(problem, x0, U):
    """Simulate the dynamics under the stacked input sequence; states x(0..N)."""
    n, m, N = problem.n, problem.m, problem.N
    xs = [np.asarray(x0, dtype=float)]
    for k in range(N):
        u = U[k * m:(k + 1) * m]
        xs.append(problem.A @ xs[-1] + problem.B @ u)
    return xs


def rollout_cost(problem, x0, U):
    """The stage-cost sum plus terminal cost along the simulated trajectory."""
    xs = rollout(problem, x0, U)
    m = problem.m
    total = xs[-1] @ problem.P @ xs[-1]
    for k in range(problem.N):
        u = U[k * m:(k + 1) * m]
        total += xs[k] @ problem.Q @ xs[k] + u @ problem.R @ u
    return total


def rollout_in_bounds(problem, x0, U, tol=0.0):
    """Whether the simulated trajectory satisfies every box bound."""
    xs = rollout(problem, x0, U)
    m = problem.m
    for k in range(problem.N):
        u = U[k * m:(k + 1) * m]
        if np.any(u > problem.u_hi + tol) or np.any(u < problem.u_lo - tol):
            return False
        if np.any(xs[k] > problem.x_hi + tol) or np.any(xs[k] < problem.x_lo - tol):
            return False
    xN = xs[problem.N]
    return bool(np.all(xN <= problem.t_hi + tol) and np.all(xN >= problem.t_lo - tol))


def rk4_step_response(A_cont, B_cont, x0, u, Ts, substeps=2000):
    """Constant-input response of dx/dt = A x + B u over Ts via RK4."""
    A_cont = np.asarray(A_cont, dtype=float)
    B_cont = np.asarray(B_cont, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    u = np.asarray(u, dtype=float)
    h = Ts / substeps

    def f(x):
        return A_cont @ x + B_cont @ u

    for _ in range(substeps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x
