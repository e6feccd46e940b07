import numpy as np
import pytest
import scipy.sparse as sp

from routedbell.bell import CHSH_SCENARIO
from routedbell.qubits import born_correlations, make_strategy


def solve_with_cvxpy(problem):
    """Independent value of an SdpProblem (maximization) through cvxpy."""
    cp = pytest.importorskip("cvxpy")
    y = cp.Variable(problem.n)
    cons = []
    for m, P in problem.blocks:
        P = sp.csc_matrix(P)
        vec = P[:, 1:] @ y + P[:, 0].toarray().ravel()
        F = cp.reshape(vec, (m, m), order="C")
        cons.append(0.5 * (F + F.T) >> 0)
    if problem.lp is not None:
        L = sp.csc_matrix(problem.lp)
        cons.append(L[:, 1:] @ y + L[:, 0].toarray().ravel() >= 0)
    if problem.A_eq.shape[0]:
        cons.append(problem.A_eq @ y == problem.b_eq)
    pr = cp.Problem(cp.Maximize(problem.c @ y + problem.c0), cons)
    pr.solve(solver="CLARABEL")
    return pr.status, pr.value


@pytest.fixture
def scenario():
    return CHSH_SCENARIO


@pytest.fixture
def chsh_table():
    return born_correlations(make_strategy("anticommuting", np.pi / 4))


@pytest.fixture
def bb84_table():
    return born_correlations(make_strategy("anticommuting", 0.0))
