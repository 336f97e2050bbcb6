import numpy as np
import pytest

from etmpc.problem import MpcProblem, condense, load_problem


@pytest.fixture(scope="session")
def four_mass():
    return load_problem("four_mass_oscillator")


@pytest.fixture(scope="session")
def four_mass_qp(four_mass):
    return condense(four_mass)


@pytest.fixture(scope="session")
def double_int():
    return load_problem("double_integrator")


@pytest.fixture(scope="session")
def double_int_qp(double_int):
    return condense(double_int)


@pytest.fixture(scope="session")
def tiny_chain():
    """Scalar 2-step chain: n=m=1, N=2, all weights 1, u in [-1,1], x in [-4,4].

    Ten constraint rows, small enough for exhaustive active-set enumeration.
    """
    return MpcProblem(A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], P=[[1.0]],
                      N=2, x_lo=[-4.0], x_hi=[4.0], u_lo=[-1.0], u_hi=[1.0],
                      name="tiny_chain")


@pytest.fixture(scope="session")
def tiny_chain_qp(tiny_chain):
    return condense(tiny_chain)


def random_problem(rng, n=None, m=None, N=None):
    """A random valid MPC problem with a stable A (always stabilizable)."""
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 3))
    N = N or int(rng.integers(2, 5))
    A = rng.normal(size=(n, n))
    A *= 0.9 / max(1e-9, np.max(np.abs(np.linalg.eigvals(A))))
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(n, n))
    Q = C.T @ C
    D = rng.normal(size=(m, m))
    R = D.T @ D + np.eye(m)
    hi = rng.uniform(0.5, 3.0, size=n)
    uhi = rng.uniform(0.5, 2.0, size=m)
    return MpcProblem(A=A, B=B, Q=Q, R=R, N=N,
                      x_lo=-hi, x_hi=hi, u_lo=-uhi, u_hi=uhi)
