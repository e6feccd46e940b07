import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routedbell.errors import TooLargeError
from routedbell.sdp import (
    SdpBuilder,
    SdpStatus,
    SolveOptions,
    dump_problem,
    feasibility,
    load_problem,
    solve,
    verify_certificate,
    verify_farkas,
)

from conftest import solve_with_cvxpy


def random_problem(seed, n=4, m=5, with_eq=False):
    """max c.y subject to 1 + sum y_i F_i PSD and |y_i| <= 2 (strictly feasible at 0)."""
    rng = np.random.default_rng(seed)
    b = SdpBuilder(n)
    blk = b.add_block(m)
    for i in range(m):
        b.add_entry(blk, None, i, i, 1.0)
    for v in range(n):
        F = rng.normal(size=(m, m))
        F = (F + F.T) / 2
        for i in range(m):
            for j in range(i, m):
                b.add_entry(blk, v, i, j, F[i, j])
        b.add_inequality({v: -1.0}, 2.0)
        b.add_inequality({v: 1.0}, 2.0)
    if with_eq:
        # cuts through y = 0, so the problem stays strictly feasible
        b.add_equality({0: 1.0, 1: -0.5}, 0.0)
    b.set_objective({v: rng.normal() for v in range(n)}, rng.normal())
    return b.build()


def tsirelson_problem():
    """Level-1 moment matrix of CHSH: variables a0 a1 b0 b1 and four products."""
    b = SdpBuilder(8)
    blk = b.add_block(5)
    # order 1, A0, A1, B0, B1; diagonal fixed to one
    for i in range(5):
        b.add_entry(blk, None, i, i, 1.0)
    for v, (i, j) in enumerate([(0, 1), (0, 2), (0, 3), (0, 4), (1, 3), (1, 4), (2, 3), (2, 4)]):
        b.add_entry(blk, v, i, j, 1.0)
    # <A0 A1> and <B0 B1> are free variables
    k = b.add_variables(2)
    b.add_entry(blk, k, 1, 2, 1.0)
    b.add_entry(blk, k + 1, 3, 4, 1.0)
    b.set_objective({4: 1.0, 5: 1.0, 6: 1.0, 7: -1.0})
    return b.build()


class TestSolve:
    def test_tsirelson(self):
        sol = solve(tsirelson_problem())
        assert sol.status is SdpStatus.OPTIMAL
        assert sol.value == pytest.approx(2 * np.sqrt(2), abs=1e-7)
        assert sol.primal_objective == pytest.approx(2 * np.sqrt(2), abs=1e-7)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**6), st.booleans())
    def test_matches_cvxpy_and_small_gap(self, seed, with_eq):
        prob = random_problem(seed, with_eq=with_eq)
        sol = solve(prob)
        assert sol.status is SdpStatus.OPTIMAL
        assert abs(sol.dual_objective - sol.primal_objective) <= 1e-6 * (1 + abs(sol.value))
        status, ref = solve_with_cvxpy(prob)
        assert status == "optimal"
        assert sol.value == pytest.approx(ref, abs=1e-5 * (1 + abs(ref)))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**6))
    def test_primal_point_is_feasible(self, seed):
        prob = random_problem(seed)
        sol = solve(prob)
        for b in range(len(prob.blocks)):
            assert np.linalg.eigvalsh(prob.block_matrix(b, sol.y)).min() >= -1e-7
        assert prob.lp_values(sol.y).min() >= -1e-7

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**6))
    def test_certificate_reverification(self, seed):
        """The bound recomputed from the dual data alone matches and is rigorous."""
        prob = random_problem(seed, with_eq=True)
        sol = solve(prob)
        rep = verify_certificate(prob, sol.dual_blocks, sol.dual_lp, sol.multipliers, y_bound=2.0)
        assert rep.valid
        assert rep.bound == pytest.approx(sol.dual_objective, abs=1e-9)
        assert rep.rigorous_bound >= sol.primal_objective - 1e-9

    def test_tampered_certificate_is_rejected(self):
        prob = random_problem(7)
        sol = solve(prob)
        bad = [X.copy() for X in sol.dual_blocks]
        bad[0][0, 0] -= 1.0
        rep = verify_certificate(prob, bad, sol.dual_lp, sol.multipliers, y_bound=2.0)
        assert not rep.valid

    def test_unbounded(self):
        b = SdpBuilder(2)
        blk = b.add_block(2)
        b.add_entry(blk, None, 0, 0, 1.0)
        b.add_entry(blk, None, 1, 1, 1.0)
        b.add_entry(blk, 0, 0, 0, 1.0)
        b.set_objective({0: 1.0, 1: 1.0})
        assert solve(b.build()).status is SdpStatus.DUAL_INFEASIBLE

    def test_size_guard(self):
        b = SdpBuilder(1)
        blk = b.add_block(30)
        b.add_entry(blk, 0, 0, 0, 1.0)
        b.set_objective({0: 1.0})
        with pytest.raises(TooLargeError):
            solve(b.build(), SolveOptions(max_dim=10))


class TestInfeasibility:
    def test_inconsistent_equalities(self):
        b = SdpBuilder(1)
        blk = b.add_block(1)
        b.add_entry(blk, None, 0, 0, 1.0)
        b.add_equality({0: 1.0}, 1.0)
        b.add_equality({0: 1.0}, 2.0)
        b.set_objective({0: 1.0})
        sol = solve(b.build())
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE

    def test_psd_infeasible_with_farkas(self):
        # [[1, y], [y, 1]] PSD needs |y| <= 1; ask for y = 2
        b = SdpBuilder(1)
        blk = b.add_block(2)
        b.add_entry(blk, None, 0, 0, 1.0)
        b.add_entry(blk, None, 1, 1, 1.0)
        b.add_entry(blk, 0, 0, 1, 1.0)
        b.add_inequality({0: 1.0}, -2.0)
        prob = b.build()
        sol = feasibility(prob)
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE
        assert verify_farkas(prob, sol.farkas)

    def test_feasible_problem_reports_slack(self):
        sol = feasibility(random_problem(3))
        assert sol.status is SdpStatus.OPTIMAL


class TestSerialization:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10**6))
    def test_dump_load_round_trip(self, seed):
        prob = random_problem(seed, with_eq=True)
        back = load_problem(dump_problem(prob))
        assert back.n == prob.n
        assert solve(back).value == pytest.approx(solve(prob).value, abs=1e-9)
