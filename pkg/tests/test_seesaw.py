import math

import numpy as np
import pytest

from routedbell.bell import CHSH_SCENARIO, chsh, jtheta
from routedbell.bounds import BoundQuery, CriticalEtaQuery, max_expression
from routedbell.errors import DomainError
from routedbell.qubits import born_correlations, make_strategy
from routedbell.seesaw import (
    SeesawConfig,
    critical_lower_bound,
    seesaw_maximize,
    srq_reproduce,
    strategy_from_qubits,
)

SQ2 = math.sqrt(2)
CS, CL = chsh(CHSH_SCENARIO, "S"), chsh(CHSH_SCENARIO, "L")
FAST = SeesawConfig(restarts=3, max_rounds=200, seed=1)


def born_value(expr, st):
    """Independent evaluation: <rho, A_x^i (x) B_k^j> from the explicit POVMs."""
    bob = list(st.BS) + list(st.BL)
    dA, dB = st.dims

    def power(povm, i, d):
        if i < 0:
            return np.eye(d)
        vals = [1.0, -1.0, 0.0][: len(povm)]
        return sum(v ** i * M for v, M in zip(vals, povm))

    total = expr.constant
    for (i, x, j, k), c in expr.terms.items():
        MA = power(st.A[x], i, dA) if i >= 0 else np.eye(dA)
        MB = power(bob[k], j, dB) if j >= 0 else np.eye(dB)
        total += c * np.trace(st.state @ np.kron(MA, MB)).real
    return total


class TestMaximize:
    def test_short_path_reaches_tsirelson(self):
        r = seesaw_maximize(CS, "q", FAST)
        assert r.value >= 2 * SQ2 - 1e-5
        assert r.value <= 2 * SQ2 + 1e-9

    def test_long_path_chsh_is_local_for_srq(self):
        r = seesaw_maximize(CL, "srq", FAST)
        assert 2 - 1e-5 <= r.value <= 2 + 1e-6

    def test_mixed_objective_meets_upper_bound(self):
        u = math.pi / 8
        obj = [(math.cos(u), CS), (math.sin(u), jtheta(CHSH_SCENARIO, 0.0))]
        r = seesaw_maximize(obj, "srq", FAST)
        e = CS * math.cos(u) + jtheta(CHSH_SCENARIO, 0.0) * math.sin(u)
        ub = max_expression(BoundQuery(e, "srq", "AB")).rigorous
        assert r.value <= ub + 1e-6
        assert r.value == pytest.approx(ub, abs=1e-3)

    @pytest.mark.parametrize("model", ["q", "srq"])
    def test_traces_monotone_and_value_sound(self, model):
        e = jtheta(CHSH_SCENARIO, 0.4)
        r = seesaw_maximize(e, model, FAST)
        for tr in r.traces:
            assert all(b >= a - 1e-10 for a, b in zip(tr, tr[1:]))
        assert r.value == pytest.approx(born_value(e, r.strategy), abs=1e-9)
        ub = max_expression(BoundQuery(e, model, "AB")).rigorous
        assert r.value <= ub + 1e-6

    def test_srq_strategy_uses_parent_marginals(self):
        r = seesaw_maximize(CL, "srq", SeesawConfig(restarts=1, max_rounds=50))
        p = r.strategy.parent
        assert p is not None
        for y in range(2):
            for b in range(2):
                M = sum(N for lab, N in zip(p.labels, p.elements) if lab[y] == b)
                np.testing.assert_allclose(M, r.strategy.BL[y][b], atol=1e-9)

    def test_unsupported_model(self):
        with pytest.raises(DomainError):
            seesaw_maximize(CS, "mqq", FAST)

    def test_config_domain(self):
        with pytest.raises(DomainError):
            SeesawConfig(d_A=5)
        with pytest.raises(DomainError):
            SeesawConfig(restarts=0)


class TestReproduce:
    def test_counterexample_table(self):
        t = born_correlations(make_strategy("counterexample"))
        d, st = srq_reproduce(t, SeesawConfig(restarts=2, max_rounds=300, seed=3))
        assert d <= 1e-6
        assert np.abs(st.table(CHSH_SCENARIO).entries - t.entries).max() <= 1e-6

    def test_joint_measurement_point(self):
        # the three-outcome parent reproduces the lossy general family at eta = 1/(1 + cos tm)
        tm = math.pi / 3
        q = CriticalEtaQuery("general", 1.0, "bin", theta_plus=0.0, theta_minus=tm)
        d, _ = srq_reproduce(q.table_at(1 / (1 + math.cos(tm))),
                             SeesawConfig(restarts=2, max_rounds=300, seed=2))
        assert d <= 1e-6

    def test_tsirelson_table_is_not_reproduced(self, chsh_table):
        d, _ = srq_reproduce(chsh_table, SeesawConfig(restarts=2, max_rounds=100))
        # the SDP distance bound is about 0.052
        assert d >= 0.05

    def test_initial_strategy_is_used(self):
        s = make_strategy("counterexample")
        d, _ = srq_reproduce(born_correlations(s), SeesawConfig(restarts=1, max_rounds=5),
                             initial=strategy_from_qubits(s))
        assert d <= 1e-9

    def test_initial_needs_parent(self):
        with pytest.raises(DomainError):
            strategy_from_qubits(make_strategy("jtheta", 0.1))


class TestCriticalLowerBound:
    def test_lower_bound_below_rigorous_critical(self):
        q = CriticalEtaQuery("chsh", 1.0, "bin")
        lb = critical_lower_bound(q, 0.4, 0.7, steps=3, cfg=SeesawConfig(restarts=2, max_rounds=300, seed=4))
        # rigorous critical value is 2 - sqrt2
        assert lb <= 2 - SQ2 + 1e-6
        assert lb >= 0.5
