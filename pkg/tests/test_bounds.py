import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routedbell import faces
from routedbell.bell import CHSH_SCENARIO, BellExpression, chsh, jtheta
from routedbell.bounds import (
    BoundQuery,
    CriticalEtaQuery,
    _build,
    critical_efficiency,
    is_member,
    max_expression,
    relaxation,
    srq_distance_bound,
    standard_chsh_critical,
    table_moment_rows,
    tradeoff_curve,
    universal_bound,
)
from routedbell.errors import DomainError, LevelTooLowError
from routedbell.ncalg import ModelClass, OutcomeMode, expression_to_moments, strategy_moment_values
from routedbell.qubits import born_correlations, make_strategy
from routedbell.sdp import SdpStatus, verify_farkas

SQ2 = math.sqrt(2)
CS, CL = chsh(CHSH_SCENARIO, "S"), chsh(CHSH_SCENARIO, "L")


def random_expression(seed):
    rng = np.random.default_rng(seed)
    terms = {(1, x, 1, k): rng.normal() for x in range(2) for k in range(4)}
    terms.update({(0, -1, 1, k): 0.3 * rng.normal() for k in range(4)})
    return BellExpression(CHSH_SCENARIO, terms)


class TestValues:
    def test_tsirelson_for_class_q(self):
        r = max_expression(BoundQuery(CS, "q", "1 + AB"))
        assert r.status is SdpStatus.OPTIMAL
        assert r.value == pytest.approx(2 * SQ2, abs=1e-6)
        assert r.rigorous >= 2 * SQ2 - 1e-9

    def test_long_path_chsh_is_local_for_srq(self):
        assert max_expression(BoundQuery(CL, "srq", "AB")).value == pytest.approx(2.0, abs=1e-6)

    @pytest.mark.parametrize("c_s", [2.2, 2.6])
    def test_monogamy_for_qc_marginals(self, c_s):
        r = max_expression(BoundQuery(CL, "mqc", "AB", [(CS, "=", c_s)]))
        assert r.value == pytest.approx(math.sqrt(8 - c_s ** 2), abs=1e-3)

    def test_rigorous_bound_not_below_value(self):
        r = max_expression(BoundQuery(jtheta(CHSH_SCENARIO, 0.3), "srq", "AB", [(CS, ">=", 2.5)]))
        assert r.rigorous >= r.value - 1e-7
        assert r.rigorous - r.value < 1e-4

    def test_infeasible_constraint(self):
        r = max_expression(BoundQuery(CL, "q", "1 + AB", [(CS, ">=", 2.9)]))
        assert r.status is SdpStatus.PRIMAL_INFEASIBLE
        assert r.value == -math.inf

    def test_missing_monomial(self):
        # <A0^2 B0> needs a word of length three
        e = BellExpression(CHSH_SCENARIO, {(2, 0, 1, 0): 1.0})
        with pytest.raises(LevelTooLowError):
            max_expression(BoundQuery(e, "q", "1"))

    def test_bad_relation(self):
        with pytest.raises(DomainError):
            BoundQuery(CL, constraints=[(CS, "<", 2.0)])


class TestOrderings:
    @settings(max_examples=6, deadline=None)
    @given(st.integers(0, 10**6))
    def test_class_nesting(self, seed):
        """Q contains Q_SR and M_QQ, which both contain M_QC."""
        e = random_expression(seed)
        v = {m: max_expression(BoundQuery(e, m, "AB")).value for m in ("q", "srq", "mqq", "mqc")}
        tol = 1e-6
        assert v["srq"] <= v["q"] + tol
        assert v["mqq"] <= v["q"] + tol
        assert v["mqc"] <= min(v["srq"], v["mqq"]) + tol

    @settings(max_examples=6, deadline=None)
    @given(st.integers(0, 10**6))
    def test_level_monotonicity(self, seed):
        e = random_expression(seed)
        vals = [max_expression(BoundQuery(e, "srq", lvl)).value for lvl in ("1", "AB", "2 + AABS")]
        assert vals[1] <= vals[0] + 1e-6
        assert vals[2] <= vals[1] + 1e-6

    @settings(max_examples=6, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from(["jtheta", "counterexample"]))
    def test_bound_dominates_explicit_strategy(self, seed, fam):
        s = make_strategy(fam, 0.2) if fam == "jtheta" else make_strategy(fam)
        e = random_expression(seed)
        model = "srq" if fam == "counterexample" else "q"
        from routedbell.bell import evaluate
        val = evaluate(e, born_correlations(s))
        assert max_expression(BoundQuery(e, model, "AB")).value >= val - 1e-6


class TestMembership:
    def test_counterexample_is_short_range(self):
        t = born_correlations(make_strategy("counterexample"))
        assert is_member(t, "srq", "AB").status is SdpStatus.OPTIMAL

    def test_tsirelson_table_is_not_short_range(self, chsh_table):
        sol = is_member(chsh_table, "srq", "AB")
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE
        ms = relaxation(CHSH_SCENARIO, ModelClass.Q_SR, OutcomeMode.INVOLUTIVE, "1 + AB")
        prob = _build(ms, (np.zeros(ms.n_vars + 1), 0.0), [],
                      table_moment_rows(chsh_table, ms, OutcomeMode.INVOLUTIVE)).build()
        assert verify_farkas(prob, sol.farkas)

    def test_distance_bound_for_ideal_chsh(self, chsh_table):
        d = srq_distance_bound(chsh_table)
        # closed form at level AB: (2 sqrt2 - 2) / 16
        assert d.value == pytest.approx((2 * SQ2 - 2) / 16, abs=1e-6)
        assert d.rigorous >= 0.05

    def test_distance_bound_vanishes_inside(self):
        t = born_correlations(make_strategy("counterexample"))
        assert abs(srq_distance_bound(t).value) < 1e-6


class TestFaces:
    def _pinned_problem(self):
        ms = relaxation(CHSH_SCENARIO, ModelClass.Q_SR, OutcomeMode.INVOLUTIVE, "1 + AB")
        obj = expression_to_moments(jtheta(CHSH_SCENARIO, 0.0), ms)
        cons = [(expression_to_moments(CS, ms), "=", 2 * SQ2)]
        return ms, _build(ms, obj, cons).build()

    def test_exposed_directions_contain_every_model(self):
        """A Tsirelson model satisfies all restrictions added by the face reduction."""
        ms, prob = self._pinned_problem()
        polys = faces.chsh_null_polys(ms.rel, "S")
        red = faces.reduce_with_nulls(prob, 0, ms, polys)
        assert red.dimension > 0
        s = make_strategy("jtheta", 0.0)
        y = strategy_moment_values(ms, s.state, s.A, s.BS, s.BL)[1:]
        rp = red.problem
        np.testing.assert_allclose(rp.A_eq @ y, rp.b_eq, atol=1e-9)
        G = ms.instantiate(np.concatenate([[1.0], y]))
        assert np.abs(G @ red.null_basis).max() < 1e-9

    def test_unpinned_problem_exposes_nothing(self):
        ms = relaxation(CHSH_SCENARIO, ModelClass.Q_SR, OutcomeMode.INVOLUTIVE, "1 + AB")
        prob = _build(ms, expression_to_moments(CS, ms), []).build()
        K0, K1 = faces.candidate_nulls(ms, faces.chsh_null_polys(ms.rel, "S"))
        assert not faces.is_exposed(prob, 0, K0)

    def test_bad_sign_pattern(self):
        ms = relaxation(CHSH_SCENARIO, ModelClass.Q_SR, OutcomeMode.INVOLUTIVE, "1 + AB")
        with pytest.raises(ValueError):
            faces.chsh_null_polys(ms.rel, "S", ((1, 1), (1, 1)))


class TestTradeoff:
    def test_envelope_matches_closed_form(self):
        curve = tradeoff_curve(CS, jtheta(CHSH_SCENARIO, 0.0), "srq", "AB",
                               np.linspace(0, math.pi / 2, 10, endpoint=False))
        for c in (2.0, 2.5):
            assert curve.envelope(c) == pytest.approx((c + math.sqrt(8 - c * c)) / 2, abs=1e-3)

    def test_grid_domain(self):
        with pytest.raises(DomainError):
            tradeoff_curve(CS, CL, u_grid=[0.0, 2.0])


class TestCritical:
    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.34, 1.0))
    def test_universal_bound_formula(self, eta_A):
        expect = min(1.0, eta_A / (3 * eta_A - 1))
        assert universal_bound(2, 2, eta_A) == pytest.approx(expect)

    def test_standard_formula(self):
        assert standard_chsh_critical(1.0) == pytest.approx(1 / SQ2)
        assert standard_chsh_critical(0.5) == 1.0

    def test_lossless_binned_chsh(self):
        r = critical_efficiency(CriticalEtaQuery("chsh", 1.0, "bin"))
        assert r.eta_L == pytest.approx(2 - SQ2, abs=1e-4)

    def test_standard_scenario(self):
        r = critical_efficiency(CriticalEtaQuery("chsh", 1.0, "bin", standard=True))
        assert r.eta_L == pytest.approx(1 / SQ2, abs=1e-4)

    def test_query_domain(self):
        with pytest.raises(DomainError):
            CriticalEtaQuery("chsh", 0.0)
