"""See-saw lower bounds and explicit short-range models.

Alternates exact best responses over one group of operators at a time with
everything else fixed: sign decompositions for two-outcome measurements,
small SDPs for parent POVMs and for measurements with a no-click outcome,
the top eigenvector of the Bell operator for the state.  Every returned
value is recomputed from the explicit strategy through the Born rule.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .bell import BellExpression, CorrelationTable, RoutedScenario, evaluate
from .errors import DomainError
from .ncalg import ModelClass
from .qubits import ParentPOVM, format_matrix, povm_correlations
from .sdp import SdpBuilder, SdpStatus, SolveOptions, solve

log = logging.getLogger(__name__)

Objective = Union[BellExpression, Sequence[Tuple[float, BellExpression]]]


@dataclass(frozen=True)
class SeesawConfig:
    d_A: int = 2
    d_B: int = 2
    restarts: int = 10
    max_rounds: int = 500
    tol: float = 1e-9
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("d_A", "d_B"):
            if getattr(self, name) not in (2, 3, 4):
                raise DomainError(f"{name} must be 2, 3 or 4")
        if self.restarts < 1 or self.max_rounds < 1:
            raise DomainError("restarts and max_rounds must be positive")
        if not self.tol > 0:
            raise DomainError("tol must be positive")


@dataclass
class SeesawStrategy:
    """Density matrix and POVMs ``A[x][a]``, ``BS[y][b]``, ``BL[y][b]``.

    For short-range models ``BL`` are the marginals of ``parent``.
    """

    state: np.ndarray
    A: List[List[np.ndarray]]
    BS: List[List[np.ndarray]]
    BL: List[List[np.ndarray]]
    parent: Optional[ParentPOVM] = None

    @property
    def dims(self) -> Tuple[int, int]:
        return self.A[0][0].shape[0], (self.BS or self.BL)[0][0].shape[0]

    def table(self, scenario: RoutedScenario) -> CorrelationTable:
        return povm_correlations(self.state, self.A, list(self.BS) + list(self.BL), scenario)

    def export(self) -> str:
        parts = ["# state\n" + format_matrix(self.state)]
        for name in ("A", "BS", "BL"):
            for y, povm in enumerate(getattr(self, name)):
                for b, M in enumerate(povm):
                    parts.append(f"# {name}{y} outcome {b}\n" + format_matrix(M))
        if self.parent is not None:
            for lab, N in zip(self.parent.labels, self.parent.elements):
                parts.append(f"# parent {''.join(map(str, lab))}\n" + format_matrix(N))
        return "".join(parts)


@dataclass
class SeesawResult:
    value: float
    strategy: SeesawStrategy
    trace: List[float]
    restart: int
    traces: List[List[float]] = field(default_factory=list, repr=False)


# ----------------------------------------------------------------------------
# Linear algebra helpers
# ----------------------------------------------------------------------------

def _herm(M):
    return (M + M.conj().T) / 2


def _random_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def _random_povm(rng, d, n):
    G = [rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(n)]
    return _normalize_povm([g @ g.conj().T for g in G])


def _random_projective(rng, d, n):
    H = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    _, U = np.linalg.eigh(H + H.conj().T)
    # balanced labels: a trivial measurement is a fixed point of the iteration
    labels = rng.permutation(np.arange(d) % n)
    return [sum((np.outer(U[:, i], U[:, i].conj()) for i in range(d) if labels[i] == a),
                np.zeros((d, d), complex)) for a in range(n)]


def _psd_part(M):
    w, U = np.linalg.eigh(_herm(M))
    return (U * np.clip(w, 0, None)) @ U.conj().T


def _normalize_povm(els):
    """Clip to PSD and rescale so the elements sum to the identity."""
    els = [_psd_part(N) for N in els]
    S = sum(els)
    w, U = np.linalg.eigh(S)
    if w.min() <= 1e-14:
        S = S + 1e-12 * np.eye(S.shape[0])
        w, U = np.linalg.eigh(S)
    R = (U / np.sqrt(w)) @ U.conj().T
    return [_herm(R @ N @ R) for N in els]


def _normalize_state(rho):
    rho = _psd_part(rho)
    return rho / np.trace(rho).real


def _sign_response(E):
    """Two-outcome POVM maximizing Tr(E0 M0) + Tr(E1 M1): projector on E0 - E1 > 0."""
    w, U = np.linalg.eigh(_herm(E[0] - E[1]))
    P = (U[:, w > 0]) @ U[:, w > 0].conj().T
    return [P, np.eye(P.shape[0]) - P]


class _HermProgram:
    """Real SDP over Hermitian matrix variables via [[Re, -Im], [Im, Re]] blocks."""

    def __init__(self):
        self.b = SdpBuilder(0)
        self.handles = []

    def herm(self, d: int) -> int:
        start = self.b.add_variables(d * d)
        blk = self.b.add_block(2 * d)
        k = start
        for i in range(d):
            self.b.add_entry(blk, k, i, i, 1.0)
            self.b.add_entry(blk, k, d + i, d + i, 1.0)
            k += 1
        for i in range(d):
            for j in range(i + 1, d):
                self.b.add_entry(blk, k, i, j, 1.0)          # real part
                self.b.add_entry(blk, k, d + i, d + j, 1.0)
                self.b.add_entry(blk, k + 1, i, d + j, -1.0)  # imaginary part
                self.b.add_entry(blk, k + 1, j, d + i, 1.0)
                k += 2
        self.handles.append((start, d))
        return len(self.handles) - 1

    def trace_coefs(self, h: int, E: np.ndarray, out: Optional[dict] = None,
                    scale: float = 1.0) -> dict:
        """Add ``scale * Tr(E H_h)`` to ``out`` (variable -> coefficient)."""
        start, d = self.handles[h]
        out = {} if out is None else out
        k = start
        for i in range(d):
            out[k] = out.get(k, 0.0) + scale * E[i, i].real
            k += 1
        for i in range(d):
            for j in range(i + 1, d):
                out[k] = out.get(k, 0.0) + scale * 2 * E[i, j].real
                out[k + 1] = out.get(k + 1, 0.0) + scale * 2 * E[i, j].imag
                k += 2
        return out

    def sum_to_identity(self, hs: Sequence[int]):
        d = self.handles[hs[0]][1]
        n = d * d
        for r in range(n):
            self.b.add_equality({self.handles[h][0] + r: 1.0 for h in hs}, 1.0 if r < d else 0.0)

    def unit_trace(self, h: int):
        start, d = self.handles[h]
        self.b.add_equality({start + i: 1.0 for i in range(d)}, 1.0)

    def matrix(self, h: int, y: np.ndarray) -> np.ndarray:
        start, d = self.handles[h]
        M = np.zeros((d, d), complex)
        k = start
        for i in range(d):
            M[i, i] = y[k]
            k += 1
        for i in range(d):
            for j in range(i + 1, d):
                M[i, j] = y[k] + 1j * y[k + 1]
                M[j, i] = y[k] - 1j * y[k + 1]
                k += 2
        return M


_L1_WEIGHT = 0.5
_SDP_OPTS = SolveOptions(max_iter=100)


# ----------------------------------------------------------------------------
# Objective as a tensor on probabilities
# ----------------------------------------------------------------------------

def _label_values(n_out: int, noclick: bool) -> np.ndarray:
    v = np.zeros(n_out)
    v[0], v[1] = 1.0, -1.0
    return v


def _weight_tensor(expr: BellExpression) -> np.ndarray:
    """W[a, b, x, k] with objective = const + sum W p(a, b | x, k)."""
    sc = expr.scenario
    if not sc.is_binary:
        raise DomainError("see-saw supports binary devices (plus an optional no-click outcome)")
    va = _label_values(sc.out_A, sc.has_noclick)
    vb = _label_values(sc.out_B, sc.has_noclick)
    W = np.zeros((sc.out_A, sc.out_B, sc.m_A, sc.m_B))
    for (i, x, j, k), c in expr.terms.items():
        fa = va ** i if i else np.ones_like(va)
        fb = vb ** j if j else np.ones_like(vb)
        W[:, :, max(x, 0), max(k, 0)] += c * np.outer(fa, fb)
    return W


def _combine(objective: Objective) -> BellExpression:
    if isinstance(objective, BellExpression):
        return objective
    items = list(objective)
    if not items:
        raise DomainError("empty objective")
    out = items[0][1] * items[0][0]
    for w, e in items[1:]:
        out = out + e * w
    return out


# ----------------------------------------------------------------------------
# Engine
# ----------------------------------------------------------------------------

class _Engine:
    def __init__(self, scenario: RoutedScenario, model: ModelClass, dA: int, dB: int):
        self.sc = scenario
        self.model = model
        self.dA, self.dB = dA, dB
        self.nA, self.nB = scenario.out_A, scenario.out_B
        self.betas = list(itertools.product(range(self.nB), repeat=scenario.m_BL))

    # state tensors ------------------------------------------------------
    def _R(self, rho):
        return rho.reshape(self.dA, self.dB, self.dA, self.dB)

    def alice_ops(self, rho, Mb):
        """S with p = Tr(M_a S) for fixed Bob element Mb."""
        return np.einsum("ibjc,cb->ij", self._R(rho), Mb)

    def bob_ops(self, rho, Ma):
        return np.einsum("ibjc,ji->bc", self._R(rho), Ma)

    def bob_povms(self, st: SeesawStrategy):
        return list(st.BS) + list(st.BL)

    def init(self, rng) -> SeesawStrategy:
        sc = self.sc
        mkA = _random_projective if self.nA == 2 else _random_povm
        mkB = _random_projective if self.nB == 2 else _random_povm
        rho = _random_state(rng, self.dA * self.dB)
        A = [mkA(rng, self.dA, self.nA) for _ in range(sc.m_A)]
        BS = [mkB(rng, self.dB, self.nB) for _ in range(sc.m_BS)]
        if self.model is ModelClass.Q_SR and sc.m_BL:
            N = _random_povm(rng, self.dB, len(self.betas))
            parent = ParentPOVM.deterministic(dict(zip(self.betas, N)), n_out=self.nB)
            return SeesawStrategy(rho, A, BS, self._marginals(parent), parent)
        BL = [mkB(rng, self.dB, self.nB) for _ in range(sc.m_BL)]
        return SeesawStrategy(rho, A, BS, BL)

    def _marginals(self, parent: ParentPOVM):
        return [parent.effective(y) for y in range(parent.n_settings)]

    def value(self, st, W, const) -> float:
        B = self.bob_povms(st)
        tot = const
        for x, k in itertools.product(range(self.sc.m_A), range(self.sc.m_B)):
            for a, b in itertools.product(range(self.nA), range(self.nB)):
                if W[a, b, x, k]:
                    tot += W[a, b, x, k] * np.trace(st.state @ np.kron(st.A[x][a], B[k][b])).real
        return float(tot)

    # best responses -----------------------------------------------------
    def _best_povm(self, E: List[np.ndarray]) -> List[np.ndarray]:
        if len(E) == 2:
            return _sign_response(E)
        prog = _HermProgram()
        hs = [prog.herm(E[0].shape[0]) for _ in E]
        prog.sum_to_identity(hs)
        obj = {}
        for h, Eh in zip(hs, E):
            prog.trace_coefs(h, Eh, obj)
        prog.b.set_objective(obj)
        sol = solve(prog.b.build(), _SDP_OPTS)
        return _normalize_povm([prog.matrix(h, sol.y) for h in hs])

    def step_A(self, st, W):
        B = self.bob_povms(st)
        for x in range(self.sc.m_A):
            E = []
            for a in range(self.nA):
                Ea = np.zeros((self.dA, self.dA), complex)
                for k, b in itertools.product(range(self.sc.m_B), range(self.nB)):
                    if W[a, b, x, k]:
                        Ea += W[a, b, x, k] * self.alice_ops(st.state, B[k][b])
                E.append(_herm(Ea))
            if any(np.abs(e).max() > 0 for e in E):
                st.A[x] = self._best_povm(E)

    def _bob_E(self, st, W, k):
        E = []
        for b in range(self.nB):
            Eb = np.zeros((self.dB, self.dB), complex)
            for x, a in itertools.product(range(self.sc.m_A), range(self.nA)):
                if W[a, b, x, k]:
                    Eb += W[a, b, x, k] * self.bob_ops(st.state, st.A[x][a])
            E.append(_herm(Eb))
        return E

    def step_B(self, st, W):
        sc = self.sc
        for y in range(sc.m_BS):
            E = self._bob_E(st, W, y)
            if any(np.abs(e).max() > 0 for e in E):
                st.BS[y] = self._best_povm(E)
        if not sc.m_BL:
            return
        if self.model is ModelClass.Q_SR:
            EL = [self._bob_E(st, W, sc.m_BS + y) for y in range(sc.m_BL)]
            Eb = [sum(EL[y][beta[y]] for y in range(sc.m_BL)) for beta in self.betas]
            N = self._best_povm(Eb)
            st.parent = ParentPOVM.deterministic(dict(zip(self.betas, N)), n_out=self.nB)
            st.BL = self._marginals(st.parent)
        else:
            for y in range(sc.m_BL):
                E = self._bob_E(st, W, sc.m_BS + y)
                if any(np.abs(e).max() > 0 for e in E):
                    st.BL[y] = self._best_povm(E)

    def step_state(self, st, W):
        B = self.bob_povms(st)
        d = self.dA * self.dB
        op = np.zeros((d, d), complex)
        for x, k in itertools.product(range(self.sc.m_A), range(self.sc.m_B)):
            for a, b in itertools.product(range(self.nA), range(self.nB)):
                if W[a, b, x, k]:
                    op += W[a, b, x, k] * np.kron(st.A[x][a], B[k][b])
        w, U = np.linalg.eigh(_herm(op))
        v = U[:, -1]
        st.state = np.outer(v, v.conj())


def _copy(st: SeesawStrategy) -> SeesawStrategy:
    return SeesawStrategy(st.state.copy(), [list(p) for p in st.A], [list(p) for p in st.BS],
                          [list(p) for p in st.BL], st.parent)


def _run_restart(args):
    expr, model, cfg, r = args
    eng = _Engine(expr.scenario, model, cfg.d_A, cfg.d_B)
    W = _weight_tensor(expr)
    rng = np.random.default_rng([cfg.seed, r])
    st = eng.init(rng)
    cur = eng.value(st, W, expr.constant)
    trace = [cur]
    for _ in range(cfg.max_rounds):
        for step in (eng.step_state, eng.step_A, eng.step_B):
            trial = _copy(st)
            step(trial, W)
            v = eng.value(trial, W, expr.constant)
            if v >= cur - 1e-12:  # exact best responses; guards SDP round-off
                st, cur = trial, max(cur, v)
        prev = trace[-1]
        trace.append(cur)
        if cur - prev <= cfg.tol * max(1.0, abs(cur)):
            break
    return cur, st, trace


def seesaw_maximize(objective: Objective, model="q", cfg: Optional[SeesawConfig] = None
                    ) -> SeesawResult:
    """Heuristic maximization of a Bell expression over explicit strategies.

    Parameters
    ----------
    objective : BellExpression or sequence of (weight, BellExpression)
    model : {"q", "srq"}
        Quantum strategies, or short-range ones where the long-path
        measurements are marginals of a parent POVM with deterministic
        responses.
    cfg : SeesawConfig

    Returns
    -------
    SeesawResult
        The best restart.  ``value`` is recomputed from the returned
        strategy through the Born rule.
    """
    cfg = cfg or SeesawConfig()
    model = ModelClass.parse(model)
    if model not in (ModelClass.Q, ModelClass.Q_SR):
        raise DomainError("see-saw supports the classes q and srq")
    expr = _combine(objective)
    from .bounds import run_parallel
    runs = run_parallel(_run_restart, [(expr, model, cfg, r) for r in range(cfg.restarts)],
                        cfg.workers)
    for r, (v, _, tr) in enumerate(runs):
        if tr[-1] < max(tr) - 1e-10:
            log.warning("restart %d trace decreased", r)
    best = max(range(len(runs)), key=lambda r: (runs[r][0], -r))
    v, st, tr = runs[best]
    val = evaluate(expr, st.table(expr.scenario))
    if abs(val - v) > 1e-8:
        log.warning("Born-rule re-evaluation differs from the see-saw value by %.3g", val - v)
    return SeesawResult(val, st, tr, best, [t for _, _, t in runs])


# ----------------------------------------------------------------------------
# Reproducing a target table with a short-range model
# ----------------------------------------------------------------------------

class _DistanceEngine(_Engine):
    """Alternating minimization of max |p_model - p_target| (each step an SDP)."""

    def __init__(self, target: CorrelationTable, dA, dB):
        super().__init__(target.scenario, ModelClass.Q_SR, dA, dB)
        self.target = target.entries

    def distance(self, st) -> float:
        return float(np.abs(st.table(self.sc).entries - self.target).max())

    def merit(self, st) -> float:
        r = np.abs(st.table(self.sc).entries - self.target)
        return float(r.max() + _L1_WEIGHT * r.mean())

    def _solve_rows(self, prog, rows):
        """Minimize max + weighted mean of |p - target|.

        ``rows`` holds ``(coef, const, target)`` with ``p = const + coef . y``.
        The max-norm alone stalls at non-smooth points under alternation;
        the mean term keeps every residual moving.
        """
        t = prog.b.add_variables(1)
        s0 = prog.b.add_variables(len(rows))
        w = _L1_WEIGHT / len(rows)
        for j, (coef, const, tgt) in enumerate(rows):
            prog.b.add_inequality({**coef, s0 + j: 1.0}, const - tgt)
            prog.b.add_inequality({**{k: -v for k, v in coef.items()}, s0 + j: 1.0}, tgt - const)
            prog.b.add_inequality({t: 1.0, s0 + j: -1.0}, 0.0)
        prog.b.set_objective({t: -1.0, **{s0 + j: -w for j in range(len(rows))}})
        return solve(prog.b.build(), _SDP_OPTS)

    def step_A(self, st):
        prog = _HermProgram()
        B = self.bob_povms(st)
        hs = [[prog.herm(self.dA) for _ in range(self.nA)] for _ in range(self.sc.m_A)]
        for g in hs:
            prog.sum_to_identity(g)
        rows = []
        for x, k in itertools.product(range(self.sc.m_A), range(self.sc.m_B)):
            for a, b in itertools.product(range(self.nA), range(self.nB)):
                S = _herm(self.alice_ops(st.state, B[k][b]))
                rows.append((prog.trace_coefs(hs[x][a], S), 0.0, self.target[a, b, x, k]))
        sol = self._solve_rows(prog, rows)
        if sol.status is SdpStatus.OPTIMAL or sol.status is SdpStatus.NUMERICAL_TROUBLE:
            st.A = [_normalize_povm([prog.matrix(h, sol.y) for h in g]) for g in hs]

    def step_B(self, st):
        sc = self.sc
        prog = _HermProgram()
        hS = [[prog.herm(self.dB) for _ in range(self.nB)] for _ in range(sc.m_BS)]
        for g in hS:
            prog.sum_to_identity(g)
        hN = [prog.herm(self.dB) for _ in self.betas]
        prog.sum_to_identity(hN)
        rows = []
        for x, k in itertools.product(range(sc.m_A), range(sc.m_B)):
            for a, b in itertools.product(range(self.nA), range(self.nB)):
                T = _herm(self.bob_ops(st.state, st.A[x][a]))
                if k < sc.m_BS:
                    coef = prog.trace_coefs(hS[k][b], T)
                else:
                    y = k - sc.m_BS
                    coef = {}
                    for h, beta in zip(hN, self.betas):
                        if beta[y] == b:
                            prog.trace_coefs(h, T, coef)
                rows.append((coef, 0.0, self.target[a, b, x, k]))
        sol = self._solve_rows(prog, rows)
        if sol.status in (SdpStatus.OPTIMAL, SdpStatus.NUMERICAL_TROUBLE):
            st.BS = [_normalize_povm([prog.matrix(h, sol.y) for h in g]) for g in hS]
            N = _normalize_povm([prog.matrix(h, sol.y) for h in hN])
            st.parent = ParentPOVM.deterministic(dict(zip(self.betas, N)), n_out=self.nB)
            st.BL = self._marginals(st.parent)

    def step_state(self, st):
        prog = _HermProgram()
        h = prog.herm(self.dA * self.dB)
        prog.unit_trace(h)
        B = self.bob_povms(st)
        rows = []
        for x, k in itertools.product(range(self.sc.m_A), range(self.sc.m_B)):
            for a, b in itertools.product(range(self.nA), range(self.nB)):
                K = np.kron(st.A[x][a], B[k][b])
                rows.append((prog.trace_coefs(h, _herm(K)), 0.0, self.target[a, b, x, k]))
        sol = self._solve_rows(prog, rows)
        if sol.status in (SdpStatus.OPTIMAL, SdpStatus.NUMERICAL_TROUBLE):
            st.state = _normalize_state(prog.matrix(h, sol.y))


def _reproduce_restart(args):
    target, cfg, r, initial = args
    eng = _DistanceEngine(target, cfg.d_A, cfg.d_B)
    if initial is not None and r == 0:
        st = _copy(initial)
    else:
        st = eng.init(np.random.default_rng([cfg.seed, r]))
    cur = eng.merit(st)
    trace = [cur]
    for _ in range(cfg.max_rounds):
        for step in (eng.step_B, eng.step_A, eng.step_state):
            trial = _copy(st)
            try:
                step(trial)
            except (np.linalg.LinAlgError, ValueError) as exc:  # degenerate step
                log.debug("step failed: %s", exc)
                continue
            d = eng.merit(trial)
            if d <= cur:
                st, cur = trial, d
        prev = trace[-1]
        trace.append(cur)
        if cur <= 1e-9 or prev - cur <= cfg.tol * max(prev, 1e-6):
            break
    return eng.distance(st), st, trace


def srq_reproduce(target: CorrelationTable, cfg: Optional[SeesawConfig] = None,
                  initial: Optional[SeesawStrategy] = None) -> Tuple[float, SeesawStrategy]:
    """Search for a short-range model reproducing ``target``.

    Returns the smallest max-norm distance found and the strategy.  A
    distance below 1e-6 exhibits such a model (up to that accuracy), so the
    efficiency point of ``target`` is a lower bound on the critical one.
    ``initial`` replaces the random start of restart 0.
    """
    cfg = cfg or SeesawConfig(restarts=4, max_rounds=200)
    if not target.scenario.is_binary:
        raise DomainError("srq_reproduce supports binary devices (plus no-click)")
    if initial is not None and initial.parent is None:
        raise DomainError("initial strategy needs a parent POVM")
    from .bounds import run_parallel
    runs = run_parallel(_reproduce_restart, [(target, cfg, r, initial) for r in range(cfg.restarts)],
                        cfg.workers)
    best = min(range(len(runs)), key=lambda r: (runs[r][0], r))
    d, st, _ = runs[best]
    return d, st


def strategy_from_qubits(strategy, n_out: int = 2) -> SeesawStrategy:
    """Wrap a :class:`~routedbell.qubits.QubitStrategy` with a parent POVM."""
    def povm(O):
        d = O.shape[0]
        return [(np.eye(d) + O) / 2, (np.eye(d) - O) / 2]
    if strategy.parent is None:
        raise DomainError("strategy has no parent POVM")
    BL = [strategy.parent.effective(y) for y in range(strategy.parent.n_settings)]
    return SeesawStrategy(np.asarray(strategy.state, complex), [povm(O) for O in strategy.A],
                          [povm(O) for O in strategy.BS], BL, strategy.parent)


def critical_lower_bound(query, lo: float = 0.0, hi: float = 1.0, steps: int = 8,
                         cfg: Optional[SeesawConfig] = None, accept: float = 1e-6) -> float:
    """Largest eta_L on a bisection grid at which an SRQ model of the lossy table is found."""
    best = lo
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        d, _ = srq_reproduce(query.table_at(mid), cfg)
        if d <= accept:
            best, lo = mid, mid
        else:
            hi = mid
    return best
