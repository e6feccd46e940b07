"""Upper bounds on Bell expressions, tradeoff curves and critical efficiencies.

Every bound here comes from a moment-matrix relaxation built by
:mod:`routedbell.ncalg` and solved with :mod:`routedbell.sdp`.  A returned
value is the dual objective of the solve, so it is a certified upper bound
on the level-restricted problem (and therefore on the correlation class).
"""

from __future__ import annotations

import csv
import functools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from . import ncalg
from .bell import (
    BellExpression,
    CorrelationTable,
    DetectionMode,
    EfficiencyVector,
    RoutedScenario,
    apply_detection,
    chsh_variants,
    restrict_to_long_path,
)
from .errors import DomainError, MissingMomentError, UnsupportedQueryError
from .ncalg import LevelSpec, ModelClass, OutcomeMode, RelationSet
from .qubits import apply_visibility, born_correlations, family_for_table
from .faces import chsh_null_polys, reduce_with_nulls
from .sdp import (SdpBuilder, SdpSolution, SdpStatus, SolveOptions, feasibility, solve,
                  verify_certificate)

log = logging.getLogger(__name__)

FIG8_LEVEL = "3 + AAAA + BSBSBSBS + BLBLBLBL + AABSBS + AABLBL + BSBSBLBL"
CI_LEVEL = "2 + AABSBS + AABLBL"

Constraint = Tuple[BellExpression, str, float]


@functools.lru_cache(maxsize=64)
def relaxation(scenario: RoutedScenario, model: ModelClass, mode: OutcomeMode,
               level: str, unit_square: frozenset = frozenset()) -> ncalg.MomentStructure:
    """Cached moment structure for a scenario, class, outcome mode and level."""
    rel = RelationSet(scenario.with_noclick(False), model, mode, frozenset(unit_square))
    return ncalg.build_moments(LevelSpec.parse(level), rel)


def _level_str(level) -> str:
    return str(level) if isinstance(level, LevelSpec) else str(LevelSpec.parse(level))


# ----------------------------------------------------------------------------
# Queries
# ----------------------------------------------------------------------------

@dataclass
class BoundQuery:
    """Maximize ``expression`` over a relaxation of ``model``.

    ``constraints`` are ``(expr, rel, value)`` triples with ``rel`` in
    ``{"=", "<=", ">="}``.  ``pinned`` fixes every observable moment to the
    values of a correlation table.
    """

    expression: BellExpression
    model: ModelClass = ModelClass.Q_SR
    level: Union[str, LevelSpec] = "AB"
    constraints: Sequence[Constraint] = ()
    pinned: Optional[CorrelationTable] = None
    mode: Optional[OutcomeMode] = None

    def __post_init__(self):
        self.model = ModelClass.parse(self.model)
        for _, rel, val in self.constraints:
            if rel not in ("=", "==", "<=", ">="):
                raise DomainError(f"unknown relation {rel!r}")
            if not np.isfinite(val):
                raise DomainError("constraint value must be finite")

    def outcome_mode(self) -> OutcomeMode:
        if self.mode is not None:
            return OutcomeMode(self.mode)
        cubic = self.expression.uses_squares or any(e.uses_squares for e, _, _ in self.constraints)
        if self.pinned is not None and self.pinned.scenario.has_noclick:
            cubic = True
        return OutcomeMode.CUBIC if cubic else OutcomeMode.INVOLUTIVE


@dataclass
class BoundResult:
    value: float
    status: SdpStatus
    primal: float
    level: str
    model: ModelClass
    size: int
    n_vars: int
    rigorous: float = math.nan
    moments: Optional[np.ndarray] = field(default=None, repr=False)
    solution: Optional[SdpSolution] = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status is not SdpStatus.PRIMAL_INFEASIBLE

    def evaluate(self, expr: BellExpression) -> float:
        """Value of ``expr`` on the optimal moment vector."""
        ms = relaxation(expr.scenario, self.model, self._mode, self.level)
        coef, const = ncalg.expression_to_moments(expr, ms)
        return float(coef @ self.moments + const)

    _mode: OutcomeMode = OutcomeMode.INVOLUTIVE


def table_moment_rows(table: CorrelationTable, ms: ncalg.MomentStructure,
                      mode: OutcomeMode):
    """List of (variable id, value) pinning all observable moments of a table."""
    sc = table.scenario
    rel = ms.rel
    maxp = 2 if mode is OutcomeMode.CUBIC else 1
    if mode is OutcomeMode.INVOLUTIVE and sc.has_noclick:
        raise MissingMomentError("a table with no-click outcomes needs the cubic relations")
    M = table.moments
    rows = {}
    for i in range(maxp + 1):
        for j in range(maxp + 1):
            if i == 0 and j == 0:
                continue
            for x in range(sc.m_A if i else 1):
                for k in range(sc.m_B if j else 1):
                    key = (i, x if i else -1, j, k if j else -1)
                    v = ms.var_of(ncalg.term_word(key, rel))
                    if v is None:
                        raise MissingMomentError(f"moment {key} missing at this level")
                    val = M[i, j, max(x, 0), max(k, 0)]
                    if v == 0:
                        if abs(val - 1.0) > 1e-9:
                            raise DomainError("a squared observable is declared unit but "
                                              f"has moment {val}")
                        continue
                    if v in rows and abs(rows[v] - val) > 1e-9:
                        raise DomainError("table violates no-signalling")
                    rows[v] = val
    return sorted(rows.items())


def _build(ms: ncalg.MomentStructure, objective, constraints, pinned_rows=()):
    coef, const = objective
    b = SdpBuilder(ms.n_vars)
    b.add_template_block(ms.template)
    for (cc, c0), rel, val in constraints:
        d = {v - 1: cc[v] for v in np.flatnonzero(cc)}
        if rel in ("=", "=="):
            b.add_equality(d, val - c0)
        elif rel == "<=":
            b.add_inequality({k: -a for k, a in d.items()}, val - c0)
        else:
            b.add_inequality(d, c0 - val)
    for v, val in pinned_rows:
        b.add_equality({v - 1: 1.0}, val)
    b.set_objective({v - 1: coef[v] for v in np.flatnonzero(coef)}, const)
    return b


TSIRELSON = 2 * math.sqrt(2)


def _tsirelson_nulls(ms: ncalg.MomentStructure, equalities, pinned: dict) -> list:
    """Null polynomials of every CHSH variant forced to ``2 sqrt 2``.

    ``equalities`` holds ``((coef, const), value)`` pairs and ``pinned``
    maps variable ids to fixed values.
    """
    sc, rel = ms.rel.scenario, ms.rel
    out = []
    for z, m in (("S", sc.m_BS), ("L", sc.m_BL)):
        if sc.m_A < 2 or m < 2:
            continue
        party = "B" + z
        if not (rel.involutive(rel.vertex("A", 0)) and rel.involutive(rel.vertex(party, 0))):
            continue
        for e in chsh_variants(sc, z):
            coef, c0 = ncalg.expression_to_moments(e, ms)
            nz = np.flatnonzero(coef)
            hit = any(abs(val - TSIRELSON) < 1e-9 and abs(cc - c0) < 1e-12
                      and np.allclose(cv, coef, rtol=0, atol=1e-12) for (cv, cc), val in equalities)
            if not hit and all(int(v) in pinned for v in nz):
                hit = abs(c0 + sum(coef[v] * pinned[int(v)] for v in nz) - TSIRELSON) < 1e-9
            if hit:
                signs = [[e.terms.get((1, x, 1, sc.bob_index(y, z)), 0.0) for y in range(2)]
                         for x in range(2)]
                out += chsh_null_polys(rel, z, signs)
    return out


def _solve(problem, ms, polys, options):
    """Solve, first restricting to the face exposed by ``polys`` if any."""
    opts = options or SolveOptions(var_bound=1.0)
    if polys:
        problem = reduce_with_nulls(problem, 0, ms, polys, opts).problem
    return solve(problem, opts), problem


def _finish(sol: SdpSolution, problem, ms, level, model, mode, options) -> BoundResult:
    if sol.status is SdpStatus.NUMERICAL_TROUBLE:
        fz = feasibility(problem, options)
        if fz.status is SdpStatus.PRIMAL_INFEASIBLE:
            sol = SdpSolution(SdpStatus.PRIMAL_INFEASIBLE, -np.inf, -np.inf, sol.y, sol.dual_blocks,
                              sol.dual_lp, sol.multipliers, np.nan, sol.iterations, sol.history,
                              fz.farkas, "infeasible constraints")
    moments = np.concatenate([[1.0], sol.y]) if sol.y.size == ms.n_vars else None
    rig = math.nan
    if sol.status in (SdpStatus.OPTIMAL, SdpStatus.NUMERICAL_TROUBLE):
        rep = verify_certificate(problem, sol.dual_blocks, sol.dual_lp, sol.multipliers)
        rig = rep.rigorous_bound
    res = BoundResult(sol.dual_objective, sol.status, sol.primal_objective, level, model,
                      ms.size, ms.n_vars, rig, moments, sol)
    res._mode = mode
    return res


def max_expression(q: BoundQuery, options: Optional[SolveOptions] = None) -> BoundResult:
    """Level-restricted upper bound on ``q.expression`` under ``q.constraints``.

    Infeasible constraints give ``value = -inf`` with status
    ``PRIMAL_INFEASIBLE`` (no model in the relaxation, hence none in the class).
    """
    mode = q.outcome_mode()
    level = _level_str(q.level)
    ms = relaxation(q.expression.scenario, q.model, mode, level)
    obj = ncalg.expression_to_moments(q.expression, ms)
    cons = [(ncalg.expression_to_moments(e, ms), rel, val) for e, rel, val in q.constraints]
    pins = table_moment_rows(q.pinned, ms, mode) if q.pinned is not None else ()
    problem = _build(ms, obj, cons, pins).build()
    eqs = [(c, val) for c, rel, val in cons if rel in ("=", "==")]
    polys = _tsirelson_nulls(ms, eqs, dict(pins))
    sol, problem = _solve(problem, ms, polys, options)
    return _finish(sol, problem, ms, level, q.model, mode, options)


def is_member(table: CorrelationTable, model=ModelClass.Q_SR, level="AB",
              mode: Optional[OutcomeMode] = None, options=None) -> SdpSolution:
    """Feasibility of the relaxation with all moments pinned to ``table``."""
    model = ModelClass.parse(model)
    if mode is None:
        mode = OutcomeMode.CUBIC if table.scenario.has_noclick else OutcomeMode.INVOLUTIVE
    ms = relaxation(table.scenario, model, mode, _level_str(level))
    pins = table_moment_rows(table, ms, mode)
    b = _build(ms, (np.zeros(ms.n_vars + 1), 0.0), [], pins)
    return feasibility(b.build(), options)


# indicator of each outcome label as a polynomial in the observable O,
# coefficients of (1, O, O^2)
_BINARY_IND = ((0.5, 0.5, 0.0), (0.5, -0.5, 0.0))
_NOCLICK_IND = ((0.0, 0.5, 0.5), (0.0, -0.5, 0.5), (1.0, 0.0, -1.0))


def probability_expression(scenario: RoutedScenario, a: int, b: int, x: int, k: int) -> BellExpression:
    """``p(a, b | x, k)`` as a linear functional on extended correlators."""
    if not scenario.is_binary:
        raise UnsupportedQueryError("probabilities as moments need binary devices")
    ind = _NOCLICK_IND if scenario.has_noclick else _BINARY_IND
    terms = {}
    for i, ca in enumerate(ind[a]):
        for j, cb in enumerate(ind[b]):
            if ca * cb:
                terms[(i, x, j, k)] = ca * cb
    return BellExpression(scenario, terms, name=f"p({a}{b}|{x}{k})")


def srq_distance_bound(target: CorrelationTable, model=ModelClass.Q_SR, level="AB",
                       options: Optional[SolveOptions] = None) -> BoundResult:
    """Certified lower bound on the max-norm distance from ``target`` to ``model``.

    Minimizes ``t`` subject to ``|p(a,b|x,k) - target| <= t`` over the
    relaxation; ``value`` and ``rigorous`` are reported as distances (the
    negated dual objective), so both are lower bounds.
    """
    model = ModelClass.parse(model)
    sc = target.scenario
    mode = OutcomeMode.CUBIC if sc.has_noclick else OutcomeMode.INVOLUTIVE
    lvl = _level_str(level)
    ms = relaxation(sc, model, mode, lvl)
    b = _build(ms, (np.zeros(ms.n_vars + 1), 0.0), [])
    t = b.add_variables(1)
    P = target.entries
    for x in range(sc.m_A):
        for k in range(sc.m_B):
            for a in range(sc.out_A):
                for bb in range(sc.out_B):
                    cc, c0 = ncalg.expression_to_moments(probability_expression(sc, a, bb, x, k), ms)
                    d = {v - 1: cc[v] for v in np.flatnonzero(cc)}
                    tgt = P[a, bb, x, k]
                    b.add_inequality({**{v: -c for v, c in d.items()}, t: 1.0}, tgt - c0)
                    b.add_inequality({**d, t: 1.0}, c0 - tgt)
    b.set_objective({t: -1.0})
    problem = b.build()
    sol = solve(problem, options or SolveOptions(var_bound=1.0))
    res = _finish(sol, problem, ms, lvl, model, mode, options)
    res.value, res.primal, res.rigorous = -res.value, -res.primal, -res.rigorous
    res.moments = None
    return res


# ----------------------------------------------------------------------------
# Tradeoff curves
# ----------------------------------------------------------------------------

@dataclass
class TradeoffPoint:
    u: float
    k_u: float
    x_at_opt: float
    y_at_opt: float
    status: str


@dataclass
class TradeoffCurve:
    exprX: BellExpression
    exprY: BellExpression
    model: ModelClass
    level: str
    points: List[TradeoffPoint]
    options: Optional[SolveOptions] = field(default=None, repr=False)

    def k(self, u: float) -> float:
        e = self.exprX * math.cos(u) + self.exprY * math.sin(u)
        return max_expression(BoundQuery(e, self.model, self.level), self.options).value

    def envelope(self, x: float, refine: bool = True) -> float:
        """Upper bound on exprY when exprX = x: min_u (k_u - cos u x) / sin u."""
        pts = [p for p in self.points if math.sin(p.u) > 1e-12 and np.isfinite(p.k_u)]
        if not pts:
            raise DomainError("grid has no usable u > 0")
        vals = [(p.k_u - math.cos(p.u) * x) / math.sin(p.u) for p in pts]
        i = int(np.argmin(vals))
        best = vals[i]
        if not refine:
            return best
        lo = pts[i - 1].u if i > 0 else pts[i].u / 2
        hi = pts[i + 1].u if i + 1 < len(pts) else math.pi / 2
        g = lambda u: (self.k(u) - math.cos(u) * x) / math.sin(u)
        r = minimize_scalar(g, bounds=(lo, hi), method="bounded", options=dict(xatol=1e-7))
        return float(min(best, r.fun))


def default_u_grid(n: int = 50) -> np.ndarray:
    return np.linspace(0.0, math.pi / 2, n, endpoint=False)


def tradeoff_curve(exprX: BellExpression, exprY: BellExpression, model=ModelClass.Q_SR,
                   level="AB", u_grid: Optional[Sequence[float]] = None,
                   options: Optional[SolveOptions] = None) -> TradeoffCurve:
    """Support function k_u = max cos u X + sin u Y over the class relaxation."""
    model = ModelClass.parse(model)
    grid = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    if np.any(grid < 0) or np.any(grid >= math.pi / 2):
        raise DomainError("u grid must lie in [0, pi/2)")
    lvl = _level_str(level)
    pts = []
    for u in grid:
        e = exprX * math.cos(u) + exprY * math.sin(u)
        r = max_expression(BoundQuery(e, model, lvl), options)
        if r.moments is not None and np.isfinite(r.value):
            xv, yv = r.evaluate(exprX), r.evaluate(exprY)
        else:
            xv = yv = math.nan
        pts.append(TradeoffPoint(float(u), r.value, xv, yv, r.status.value))
    return TradeoffCurve(exprX, exprY, model, lvl, pts, options)


def write_tradeoff_csv(curve: TradeoffCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "k_u", "exprX_at_opt", "exprY_at_opt", "level", "status"])
        for p in curve.points:
            w.writerow([f"{p.u:.12g}", f"{p.k_u:.12g}", f"{p.x_at_opt:.12g}",
                        f"{p.y_at_opt:.12g}", curve.level, p.status])


# ----------------------------------------------------------------------------
# Critical detection efficiency
# ----------------------------------------------------------------------------

@dataclass
class CriticalEtaQuery:
    family: str = "chsh"
    eta_S: float = 1.0
    mode: DetectionMode = DetectionMode.BIN
    model: ModelClass = ModelClass.Q_SR
    level: Union[str, LevelSpec] = CI_LEVEL
    theta: Optional[float] = None
    theta_plus: Optional[float] = None
    theta_minus: Optional[float] = None
    nu: Optional[float] = None
    standard: bool = False  # drop the short path (standard Bell test)

    def __post_init__(self):
        if not 0.0 < self.eta_S <= 1.0:
            raise DomainError("eta_S must lie in (0, 1]")
        if self.nu is not None and not 0.0 < self.nu <= 1.0:
            raise DomainError("nu must lie in (0, 1]")
        self.mode = DetectionMode(self.mode)
        self.model = ModelClass.parse(self.model)

    def ideal_table(self) -> CorrelationTable:
        strat = family_for_table(self.family, theta=self.theta, theta_minus=self.theta_minus,
                                 theta_plus=self.theta_plus)
        if self.nu is not None:
            strat = apply_visibility(strat, "local", nu=self.nu)
        return born_correlations(strat)

    def table_at(self, eta_L: float) -> CorrelationTable:
        t = apply_detection(self.ideal_table(),
                            EfficiencyVector(self.eta_S, self.eta_S, eta_L, self.mode))
        return restrict_to_long_path(t) if self.standard else t


def _affine_rows(q: CriticalEtaQuery, ms, mode):
    """Pinned moments as alpha + beta * eta_L."""
    r0 = dict(table_moment_rows(q.table_at(0.0), ms, mode))
    r1 = dict(table_moment_rows(q.table_at(1.0), ms, mode))
    rh = dict(table_moment_rows(q.table_at(0.5), ms, mode))
    rows = []
    for v in r0:
        a, b = r0[v], r1[v] - r0[v]
        if abs(a + 0.5 * b - rh[v]) > 1e-10:
            raise UnsupportedQueryError("correlations are not affine in eta_L")
        rows.append((v, a, b))
    return rows


@dataclass
class CriticalResult:
    eta_L: float
    status: SdpStatus
    level: str
    lower: Optional[float] = None
    solution: Optional[SdpSolution] = field(default=None, repr=False)


def critical_efficiency(q: CriticalEtaQuery, options: Optional[SolveOptions] = None) -> CriticalResult:
    """Upper bound on the long-path efficiency needed to leave the class.

    Solves ``max eta_L`` with ``0 <= eta_L <= 1`` as an extra SDP variable and
    every observed moment pinned to its (affine) value at ``eta_L``.
    Returns 1 when the correlations stay in the class for all efficiencies.
    """
    mode = OutcomeMode.CUBIC if q.mode is DetectionMode.KEEP else OutcomeMode.INVOLUTIVE
    level = _level_str(q.level)
    sc = q.table_at(1.0).scenario
    # Lossless devices can be taken to satisfy X^2 = 1: replacing X by
    # X + (1 - X^2) leaves X|psi> and hence every observed moment unchanged,
    # and it removes a face of the moment cone on which the SDP has no
    # interior.
    unit = frozenset({"A", "BS"}) if (mode is OutcomeMode.CUBIC and q.eta_S == 1.0) else frozenset()
    ms = relaxation(sc, q.model, mode, level, unit)
    rows = _affine_rows(q, ms, mode)
    b = SdpBuilder(ms.n_vars)
    b.add_template_block(ms.template)
    t = b.add_variables(1)
    for v, a, beta in rows:
        d = {v - 1: 1.0}
        if beta:
            d[t] = -beta
        b.add_equality(d, a)
    b.add_inequality({t: 1.0}, 0.0)
    b.add_inequality({t: -1.0}, 1.0)
    b.set_objective({t: 1.0})
    problem = b.build()
    fixed = {v: a for v, a, beta in rows if beta == 0}
    sol, problem = _solve(problem, ms, _tsirelson_nulls(ms, [], fixed), options)
    if sol.status is SdpStatus.PRIMAL_INFEASIBLE:
        return CriticalResult(0.0, sol.status, level, solution=sol)
    rep = verify_certificate(problem, sol.dual_blocks, sol.dual_lp, sol.multipliers)
    val = float(min(1.0, rep.rigorous_bound))
    return CriticalResult(val, sol.status, level, solution=sol)


def critical_curve(family: str, eta_grid: Sequence[float], mode=DetectionMode.BIN,
                   level=CI_LEVEL, model=ModelClass.Q_SR, workers: int = 1,
                   **kw) -> List[CriticalResult]:
    """critical_efficiency over a grid of eta_S values (results in input order)."""
    qs = [CriticalEtaQuery(family, float(e), mode, model, level, **kw) for e in eta_grid]
    return run_parallel(critical_efficiency, qs, workers)


def write_critical_csv(rows, path) -> None:
    """rows: iterable of (query, CriticalResult)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eta_S", "eta_L_upper", "eta_L_lower_if_available", "mode", "family",
                    "theta", "level", "status"])
        for q, r in rows:
            theta = q.theta if q.theta is not None else (q.theta_minus if q.theta_minus is not None else "")
            lower = "" if r.lower is None else f"{r.lower:.12g}"
            w.writerow([f"{q.eta_S:.12g}", f"{r.eta_L:.12g}", lower, q.mode.value,
                        q.family, theta, r.level, r.status.value])


# ----------------------------------------------------------------------------
# Closed forms
# ----------------------------------------------------------------------------

def universal_bound(m_A: int, m_BL: int, eta_A: float) -> float:
    """Long-path efficiency below which an SRQ model always exists.

    ``eta_A (m_A - 1) / (eta_A (m_A m_BL - 1) - (m_BL - 1))``; never below
    ``1 / m_BL``.  A non-positive denominator means no constraint (returns 1).
    """
    if m_A < 1 or m_BL < 1:
        raise DomainError("m_A and m_BL must be >= 1")
    if not 0.0 < eta_A <= 1.0:
        raise DomainError("eta_A must lie in (0, 1]")
    den = eta_A * (m_A * m_BL - 1) - (m_BL - 1)
    if den <= 0:
        return 1.0
    return float(min(1.0, eta_A * (m_A - 1) / den))


def standard_chsh_critical(eta_S: float) -> float:
    """Long-arm efficiency threshold of a standard CHSH test with A at eta_S."""
    if not 0.0 < eta_S <= 1.0:
        raise DomainError("eta_S must lie in (0, 1]")
    den = (math.sqrt(2) + 1) * eta_S - 1
    if den <= 0:
        return 1.0
    return float(min(1.0, eta_S / den))


def visibility_threshold(family: str, eta_S: float = 1.0, level=CI_LEVEL, lo: float = 0.9,
                         hi: float = 1.0, tol: float = 1e-3, margin: float = 1e-4,
                         options: Optional[SolveOptions] = None) -> float:
    """Smallest local visibility at which the no-click test still gains something.

    For ``family="chsh"`` the gain is a routed critical efficiency below the
    standard one (the switch helps); for ``"bb84"`` it is any critical
    efficiency below 1 (the correlations are nonlocal at all).  Bisection
    on ``nu`` in ``[lo, hi]`` down to ``tol``.
    """
    fam = family.lower()
    if fam not in ("chsh", "bb84"):
        raise DomainError("family must be 'chsh' or 'bb84'")

    def gains(nu: float) -> bool:
        q = CriticalEtaQuery(fam, eta_S, DetectionMode.KEEP, ModelClass.Q_SR, level, nu=nu)
        routed = critical_efficiency(q, options).eta_L
        if fam == "bb84":
            return routed < 1.0 - margin
        q.standard = True
        return critical_efficiency(q, options).eta_L - routed > margin

    if not gains(hi):
        return math.nan
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gains(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ----------------------------------------------------------------------------
# Worker pool
# ----------------------------------------------------------------------------

def run_parallel(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map ``fn`` over ``items``; results are returned in input order."""
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    workers = min(workers, len(items), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
