import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routedbell.bell import (
    CHSH_SCENARIO,
    BellExpression,
    CorrelationTable,
    DetectionMode,
    EfficiencyVector,
    RoutedScenario,
    algebraic_bound,
    apply_detection,
    bin_noclick,
    chsh,
    chsh_max,
    chsh_variants,
    correlator,
    deterministic_table,
    evaluate,
    jpm,
    jtheta,
    jtilde,
    local_bound,
    mix_tables,
    restrict_to_long_path,
    table_from_moments,
    uniform_table,
)
from routedbell.errors import DomainError, IncompatibleScenarioError, InvalidInputError
from routedbell.qubits import X, Z, QubitStrategy, born_correlations, make_strategy

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_observable(rng, d=2):
    """Random Hermitian matrix with spectrum in [-1, 1]."""
    M = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = (M + M.conj().T) / 2
    w, V = np.linalg.eigh(H)
    w = np.clip(w / np.abs(w).max(), -1, 1) * rng.uniform(0.2, 1.0)
    return (V * w) @ V.conj().T


def random_state(rng, d=4, rank=2):
    G = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_table(seed):
    rng = np.random.default_rng(seed)
    s = QubitStrategy(random_state(rng),
                      tuple(random_observable(rng) for _ in range(2)),
                      tuple(random_observable(rng) for _ in range(2)),
                      tuple(random_observable(rng) for _ in range(2)))
    return born_correlations(s)


def brute_force_local(expr, values=(1.0, -1.0)):
    """Maximum over deterministic assignments, written out term by term."""
    sc = expr.scenario
    best = -math.inf
    for a in itertools.product(values, repeat=sc.m_A):
        for b in itertools.product(values, repeat=sc.m_B):
            tot = expr.constant
            for (i, x, j, k), c in expr.terms.items():
                va = a[x] ** i if i else 1.0
                vb = b[k] ** j if j else 1.0
                tot += c * va * vb
            best = max(best, tot)
    return best


class TestScenario:
    def test_flattened_bob_settings(self):
        sc = RoutedScenario(m_BS=2, m_BL=3)
        assert sc.bob_settings() == [(0, "S"), (1, "S"), (0, "L"), (1, "L"), (2, "L")]
        assert sc.bob_index(1, "L") == 3
        assert sc.device_of(1) == "S" and sc.device_of(2) == "L"

    def test_bad_cardinalities(self):
        with pytest.raises(DomainError):
            RoutedScenario(m_A=0)
        with pytest.raises(DomainError):
            CHSH_SCENARIO.bob_index(2, "S")
        with pytest.raises(DomainError):
            CHSH_SCENARIO.bob_index(0, "Q")


class TestTable:
    def test_rejects_signalling(self):
        p = uniform_table(CHSH_SCENARIO).entries.copy()
        # shift weight on Alice's side for one of Bob's settings only
        p[0, 0, 0, 0] += 0.1
        p[1, 0, 0, 0] -= 0.1
        with pytest.raises(InvalidInputError):
            CorrelationTable(CHSH_SCENARIO, p)

    def test_rejects_wrong_shape(self):
        with pytest.raises(IncompatibleScenarioError):
            CorrelationTable(CHSH_SCENARIO, np.ones((2, 2, 2, 2)) / 4)

    @settings(max_examples=30, deadline=None)
    @given(seeds)
    def test_born_tables_are_valid(self, seed):
        t = random_table(seed)
        p = t.entries
        assert np.all(p >= -1e-12)
        np.testing.assert_allclose(p.sum(axis=(0, 1)), 1.0, atol=1e-12)
        # Alice's marginal does not depend on Bob's setting and vice versa
        pA = p.sum(axis=1)
        pB = p.sum(axis=0)
        np.testing.assert_allclose(pA, pA[:, :, :1].repeat(pA.shape[2], axis=2), atol=1e-12)
        np.testing.assert_allclose(pB, pB[:, :1, :].repeat(pB.shape[1], axis=1), atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_json_round_trip(self, seed):
        t = random_table(seed)
        back = CorrelationTable.from_json(t.to_json())
        np.testing.assert_array_equal(back.entries, t.entries)

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_correlators_rebuild_table(self, seed):
        t = random_table(seed)
        np.testing.assert_allclose(t.correlators().to_table().entries, t.entries, atol=1e-12)
        np.testing.assert_allclose(table_from_moments(t.scenario, t.moments).entries,
                                   t.entries, atol=1e-12)

    def test_restrict_to_long_path(self, chsh_table):
        std = restrict_to_long_path(chsh_table)
        assert std.scenario.m_BS == 0
        np.testing.assert_array_equal(std.entries, chsh_table.entries[:, :, :, 2:])

    def test_mixture_of_deterministic_tables(self):
        sc = CHSH_SCENARIO
        t0 = deterministic_table(sc, [0, 1], [0, 0, 1, 1])
        t1 = deterministic_table(sc, [1, 1], [0, 1, 0, 1])
        mix = mix_tables([0.25, 0.75], [t0, t1])
        assert mix.entries[0, 0, 0, 0] == pytest.approx(0.25)
        assert mix.entries[1, 0, 1, 0] == pytest.approx(1.0)


class TestDetection:
    @settings(max_examples=25, deadline=None)
    @given(seeds, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_binning_map_identity(self, seed, eA, eS, eL):
        """Binning a kept no-click table equals applying binned losses directly."""
        t = random_table(seed)
        keep = apply_detection(t, EfficiencyVector(eA, eS, eL, DetectionMode.KEEP))
        binned = apply_detection(t, EfficiencyVector(eA, eS, eL, DetectionMode.BIN))
        np.testing.assert_allclose(bin_noclick(keep).entries, binned.entries, atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(seeds, st.floats(0, 1), st.floats(0, 1))
    def test_kept_table_is_valid(self, seed, eA, eL):
        t = apply_detection(random_table(seed), EfficiencyVector(eA, 1.0, eL, "keep"))
        assert t.scenario.has_noclick
        np.testing.assert_allclose(t.entries.sum(axis=(0, 1)), 1.0, atol=1e-12)
        # long-path no-click rate is 1 - eta_L whatever Alice does
        np.testing.assert_allclose(t.entries[:, -1, :, 2:].sum(axis=0), 1 - eL, atol=1e-12)

    def test_binned_long_path_correlator(self, chsh_table):
        """Binned correlations: <A B_L> scales by eta_L, <B_L> picks up 1 - eta_L."""
        eta = 0.7
        t = apply_detection(chsh_table, EfficiencyVector(1.0, 1.0, eta))
        M = t.moments
        np.testing.assert_allclose(M[1, 1, :, 2:], eta * chsh_table.moments[1, 1, :, 2:], atol=1e-14)
        np.testing.assert_allclose(M[0, 1, 0, 2:], 1 - eta, atol=1e-14)

    def test_efficiency_range(self):
        with pytest.raises(DomainError):
            EfficiencyVector(1.2, 1.0, 1.0)

    def test_double_detection_rejected(self, chsh_table):
        kept = apply_detection(chsh_table, EfficiencyVector(1, 1, 0.5, "keep"))
        with pytest.raises(InvalidInputError):
            apply_detection(kept, EfficiencyVector(1, 1, 0.5, "keep"))


class TestExpressions:
    @pytest.mark.parametrize("theta", [0.0, math.pi / 8, math.pi / 4])
    def test_jtheta_local_bound_is_two(self, theta):
        e = jtheta(CHSH_SCENARIO, theta)
        assert local_bound(e) == pytest.approx(2.0, abs=1e-12)
        assert brute_force_local(e) == pytest.approx(2.0, abs=1e-12)

    def test_chsh_variant_bounds(self):
        for e in chsh_variants(CHSH_SCENARIO, "S"):
            assert local_bound(e) == pytest.approx(2.0)
            assert algebraic_bound(e) == pytest.approx(4.0)

    @settings(max_examples=25, deadline=None)
    @given(seeds)
    def test_local_bound_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        terms = {(1, x, 1, k): rng.normal() for x in range(2) for k in range(4)}
        terms.update({(1, x, 0, -1): rng.normal() for x in range(2)})
        terms.update({(0, -1, 1, k): rng.normal() for k in range(4)})
        e = BellExpression(CHSH_SCENARIO, terms, constant=rng.normal())
        assert local_bound(e) == pytest.approx(brute_force_local(e), abs=1e-10)

    def test_noclick_local_bound_matches_brute_force(self):
        for th in (0.1, 0.3, 0.6):
            e = jtilde(None, th)
            assert local_bound(e, "noclick") == pytest.approx(
                brute_force_local(e, (1.0, -1.0, 0.0)), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seeds)
    def test_evaluate_is_linear(self, seed):
        t = random_table(seed)
        a, b = chsh(CHSH_SCENARIO, "S"), jtheta(CHSH_SCENARIO, 0.4)
        combo = a * 0.3 + b * -1.7
        assert evaluate(combo, t) == pytest.approx(0.3 * evaluate(a, t) - 1.7 * evaluate(b, t))

    def test_evaluate_by_hand(self, chsh_table):
        # <A0 B0^S> for A0 = X, B0 = (X + Z)/sqrt2 on phi+
        val = evaluate(correlator(CHSH_SCENARIO, 0, 0, "S"), chsh_table)
        assert val == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_tsirelson_on_both_paths(self, chsh_table):
        assert evaluate(chsh(CHSH_SCENARIO, "S"), chsh_table) == pytest.approx(2 * math.sqrt(2))
        assert chsh_max(chsh_table, "L") == pytest.approx(2 * math.sqrt(2))

    @pytest.mark.parametrize("tp, tm", [(0.0, math.pi / 3), (0.4, 0.7), (1.0, 0.3)])
    def test_long_path_chsh_on_general_family(self, tp, tm):
        """Relabelled CHSH_L equals 2 c_{+} (c_{-} + s_{-}) on the two-angle family."""
        t = born_correlations(make_strategy("general", theta_plus=tp, theta_minus=tm))
        e = chsh(CHSH_SCENARIO, "L", minus=(0, 0))
        expect = 2 * math.cos(tp) * (math.cos(tm) + math.sin(tm))
        assert abs(evaluate(e, t)) == pytest.approx(abs(expect), abs=1e-12)

    @pytest.mark.parametrize("tp, tm", [(0.0, 0.5), (0.2, 0.6), (0.7, 1.2)])
    def test_jpm_local_bound(self, tp, tm):
        e = jpm(CHSH_SCENARIO, tp, tm)
        expect = 2 * (math.cos(tp) + math.sin(tp) + math.cos(tm))
        assert brute_force_local(e) == pytest.approx(expect, abs=1e-12)

    def test_scenario_mismatch(self):
        other = RoutedScenario(m_A=3)
        with pytest.raises(IncompatibleScenarioError):
            evaluate(chsh(CHSH_SCENARIO), uniform_table(other))

    def test_square_of_chsh_by_hand(self):
        """C^2 = 4 - [A0, A1][B0, B1] for involutive observables (numerical check)."""
        rng = np.random.default_rng(3)
        def refl():
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            return v[0] * X + v[1] * 1j * X @ Z + v[2] * Z
        A0, A1, B0, B1 = (refl() for _ in range(4))
        kr = np.kron
        C = kr(A0, B0) + kr(A0, B1) + kr(A1, B0) - kr(A1, B1)
        comm = lambda P, Q: P @ Q - Q @ P
        np.testing.assert_allclose(C @ C, 4 * np.eye(4) - kr(comm(A0, A1), comm(B0, B1)), atol=1e-12)
