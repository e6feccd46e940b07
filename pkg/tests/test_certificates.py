import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routedbell import certificates as cert
from routedbell.bell import CHSH_SCENARIO, RoutedScenario, chsh, evaluate, jtheta
from routedbell.errors import DomainError
from routedbell.qubits import apply_visibility, born_correlations, make_strategy

SQ2 = math.sqrt(2)


def _reflection(rng, d, basis=None):
    if basis is None:
        basis = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))[0]
    w = rng.choice([1.0, -1.0], size=d)
    return (basis * w) @ basis.conj().T


def srq_operators(rel, rng, d=3):
    """A on the first factor; B_S generic and B_L jointly diagonal on the second."""
    eye = np.eye(d)
    shared = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))[0]
    ops = {}
    for x in range(2):
        ops[rel.vertex("A", x)] = np.kron(_reflection(rng, d), eye)
        ops[rel.vertex("BS", x)] = np.kron(eye, _reflection(rng, d))
        ops[rel.vertex("BL", x)] = np.kron(eye, _reflection(rng, d, shared))
    return ops


def poly_matrix(p, ops):
    D = next(iter(ops.values())).shape[0]
    out = np.zeros((D, D), dtype=complex)
    for word, c in p.items():
        M = np.eye(D, dtype=complex)
        for code in word:
            M = M @ ops[code // 2]
        out += c * M
    return out


class TestSos:
    @pytest.mark.parametrize("u", np.linspace(0, math.pi / 4 - 1e-3, 7))
    def test_identity_holds(self, u):
        assert cert.verify_sos_prop2(u)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, math.pi / 4 - 1e-4), st.integers(0, 10**6))
    def test_identity_on_operators(self, u, seed):
        """Check the decomposition on random operators obeying the SRQ relations."""
        c = cert.sos_certificate(u)
        ops = srq_operators(c.rel, np.random.default_rng(seed))
        lhs = poly_matrix(c.target, ops)
        rhs = sum(w * poly_matrix(P, ops).conj().T @ poly_matrix(P, ops) for w, P in c.squares)
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)
        assert all(w >= 0 for w in c.weights)

    def test_excluded_point(self):
        with pytest.raises(DomainError):
            cert.sos_certificate(math.pi / 4)

    def test_linearization(self):
        assert cert.verify_prop2_linearization()

    @pytest.mark.parametrize("c_s, j", [(2.0, 2.0), (2 * SQ2, SQ2), (2.4, 1.9483314773547882)])
    def test_tradeoff_curve(self, c_s, j):
        assert cert.tradeoff_curve_srq(c_s) == pytest.approx(j, abs=1e-12)


class TestUniversalModel:
    @pytest.mark.parametrize("family", ["chsh", "bb84"])
    def test_matches_lossy_table(self, family):
        from routedbell.qubits import family_for_table
        t = born_correlations(family_for_table(family))
        assert cert.verify_prop3(t, 1.0) <= 1e-12

    def test_weights_at_unit_efficiency(self):
        eta_L, s, t = cert.prop3_weights(1.0, 2, 2)
        assert eta_L == pytest.approx(0.5)
        assert s == pytest.approx(1.0) and t == pytest.approx(0.0)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_model_is_a_valid_table(self, s, t):
        p = cert.prop3_model(born_correlations(make_strategy("jtheta", 0.3)), s, t).table()
        np.testing.assert_allclose(p.entries.sum(axis=(0, 1)), 1.0, atol=1e-12)

    def test_large_scenarios(self):
        sc = RoutedScenario(3, 2, 2, 2, 3, 2)
        rng = np.random.default_rng(5)
        p = rng.random((2, 2, 3, 5))
        # product tables are trivially valid behaviours
        pa = rng.random((2, 3))
        pa /= pa.sum(axis=0)
        pb = rng.random((2, 5))
        pb /= pb.sum(axis=0)
        p = np.einsum("ax,bk->abxk", pa, pb)
        from routedbell.bell import CorrelationTable
        assert cert.verify_prop3(CorrelationTable(sc, p), 0.8) <= 1e-12


class TestTable1:
    @pytest.mark.parametrize("row, column", [(r, c) for r in cert.ROWS for c in cert.COLUMNS
                                             if (r, c) != ("general", "routed-not-binned")])
    def test_analytic_entries(self, row, column):
        assert cert.verify_table1(row, column).status == "verified"

    def test_formulas(self):
        assert cert.table1_formula("anticommuting", "routed-binned") == pytest.approx(2 - SQ2)
        assert cert.table1_formula("general", "routed-binned", theta_minus=math.pi / 3) == pytest.approx(2 / 3)
        assert cert.table1_formula("anticommuting", "standard", theta=math.pi / 4) == pytest.approx(1 / SQ2)


class TestBoundSuite:
    def test_all_checks_pass(self):
        rep = cert.verify_bound_suite()
        assert rep.passed, rep.text()
        assert len(rep.checks) >= 15

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.0, math.pi / 4))
    def test_jtilde_formula_continuity(self, th):
        assert cert.jtilde_local_formula(th) >= 0


class TestVisibility:
    def test_bb84_threshold(self):
        assert cert.bb84_visibility_threshold() == pytest.approx(1 / (4 - 2 * SQ2) ** 0.25, abs=1e-9)

    def test_violation_sign(self):
        v = cert.BB84_THRESHOLD
        assert cert.bb84_violation(v + 1e-3, v + 1e-3) > 0
        assert cert.bb84_violation(v - 1e-3, v - 1e-3) < 0

    def test_violation_matches_direct_evaluation(self):
        s = apply_visibility(make_strategy("anticommuting", 0.0), "split", v_S=0.99, v_L=0.97)
        t = born_correlations(s)
        c_s = evaluate(chsh(CHSH_SCENARIO, "S"), t)
        expect = evaluate(jtheta(CHSH_SCENARIO, 0.0), t) - (c_s + math.sqrt(8 - c_s ** 2)) / 2
        assert cert.bb84_violation(0.99, 0.97) == pytest.approx(expect, abs=1e-12)
