"""Explicit qubit strategies, noise models and joint-measurement tools."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bell import CorrelationTable, RoutedScenario
from .errors import DomainError, InvalidInputError

I2 = np.eye(2)
X = np.array([[0.0, 1.0], [1.0, 0.0]])
Z = np.array([[1.0, 0.0], [0.0, -1.0]])
Y = 1j * X @ Z

PSD_TOL = 1e-10


def phi_plus() -> np.ndarray:
    v = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2)
    return np.outer(v, v)


def _herm(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    return (M + M.conj().T) / 2


def min_eig(M) -> float:
    return float(np.linalg.eigvalsh(_herm(M)).min())


@dataclass(frozen=True)
class ParentPOVM:
    """Joint measurement with outcomes ``labels`` and response function.

    ``response[y][b, l]`` is the probability that setting ``y`` outputs label
    ``b`` when the parent outcome is ``l``.  With deterministic responses the
    parent labels are tuples ``beta`` and setting ``y`` outputs ``beta[y]``.
    """

    elements: Tuple[np.ndarray, ...]
    labels: Tuple[Tuple[int, ...], ...]
    response: np.ndarray  # shape (m, n_out, n_parent)

    def __post_init__(self):
        els = tuple(_herm(N) for N in self.elements)
        object.__setattr__(self, "elements", els)
        object.__setattr__(self, "response", np.asarray(self.response, dtype=float))
        check_povm(self)

    @classmethod
    def deterministic(cls, elements: Dict[Tuple[int, ...], np.ndarray],
                      n_out: int = 2) -> "ParentPOVM":
        labels = tuple(sorted(elements))
        m = len(labels[0])
        resp = np.zeros((m, n_out, len(labels)))
        for l, beta in enumerate(labels):
            for y in range(m):
                resp[y, beta[y], l] = 1.0
        return cls(tuple(elements[b] for b in labels), labels, resp)

    @property
    def n_settings(self) -> int:
        return self.response.shape[0]

    def effective(self, y: int) -> List[np.ndarray]:
        """POVM {M_b|y} obtained by post-processing the parent outcome."""
        return [sum(self.response[y, b, l] * N for l, N in enumerate(self.elements))
                for b in range(self.response.shape[1])]

    def observable(self, y: int) -> np.ndarray:
        """M_{0|y} - M_{1|y} (the +-1 observable; no-click carries weight 0)."""
        M = self.effective(y)
        return M[0] - M[1]


def check_povm(povm: ParentPOVM, tol: float = PSD_TOL) -> None:
    d = povm.elements[0].shape[0]
    for N in povm.elements:
        if min_eig(N) < -tol:
            raise InvalidInputError("parent POVM element is not positive")
    if np.abs(sum(povm.elements) - np.eye(d)).max() > tol:
        raise InvalidInputError("parent POVM does not sum to identity")
    r = povm.response
    if r.min() < -tol or np.abs(r.sum(axis=1) - 1).max() > tol:
        raise InvalidInputError("response rows are not distributions")


@dataclass(frozen=True)
class QubitStrategy:
    """State and +-1 observables for A, B_S and B_L.

    Observables may have spectrum inside [-1, 1] (noisy measurements).  The
    local dimensions are read from the observables, so higher-dimensional
    strategies are accepted as well.
    """

    state: np.ndarray
    A: Tuple[np.ndarray, ...]
    BS: Tuple[np.ndarray, ...]
    BL: Tuple[np.ndarray, ...]
    family: str = "custom"
    params: Dict[str, float] = field(default_factory=dict)
    parent: Optional[ParentPOVM] = None

    def __post_init__(self):
        object.__setattr__(self, "state", _herm(self.state))
        for name in ("A", "BS", "BL"):
            object.__setattr__(self, name, tuple(_herm(O) for O in getattr(self, name)))
        check_strategy(self)

    @property
    def dims(self) -> Tuple[int, int]:
        dB = (self.BL or self.BS)[0].shape[0]
        return self.A[0].shape[0], dB

    @property
    def scenario(self) -> RoutedScenario:
        return RoutedScenario(len(self.A), 2, len(self.BS), 2, len(self.BL), 2, False)


def check_strategy(s: QubitStrategy, tol: float = PSD_TOL) -> None:
    rho = s.state
    if abs(np.trace(rho).real - 1) > tol or min_eig(rho) < -tol:
        raise InvalidInputError("state is not a density matrix")
    for O in (*s.A, *s.BS, *s.BL):
        ev = np.linalg.eigvalsh(O)
        if ev.min() < -1 - tol or ev.max() > 1 + tol:
            raise InvalidInputError("observable spectrum outside [-1, 1]")


def _rot(theta: float) -> np.ndarray:
    """Observable sin(theta) X + cos(theta) Z."""
    return np.sin(theta) * X + np.cos(theta) * Z


_SHORT = ((X + Z) / np.sqrt(2), (X - Z) / np.sqrt(2))


def make_strategy(family: str, theta: Optional[float] = None,
                  theta_plus: Optional[float] = None,
                  theta_minus: Optional[float] = None) -> QubitStrategy:
    """Named strategy families on the maximally entangled state.

    Parameters
    ----------
    family : {"jtheta", "anticommuting", "general", "counterexample"}
        ``jtheta`` and ``anticommuting`` share the long-path observables
        ``B0 = sX + cZ``, ``B1 = cX - sZ``; ``general`` uses
        ``B_y = sin(theta_y) X + cos(theta_y) Z`` with
        ``theta_0 = theta_plus - theta_minus``, ``theta_1 = theta_plus + theta_minus``.
        ``counterexample`` has A measuring Z then X, Tsirelson short-path
        observables, and a long path measured in the Z basis with the
        result relayed to both settings.
    """
    fam = family.lower().replace("-", "").replace("_", "")
    rho = phi_plus()
    if fam in ("jtheta", "anticommuting"):
        theta = 0.0 if theta is None else float(theta)
        if not -1e-12 <= theta <= np.pi / 4 + 1e-12:
            raise DomainError("theta must lie in [0, pi/4]")
        c, s = np.cos(theta), np.sin(theta)
        BL = (s * X + c * Z, c * X - s * Z)
        return QubitStrategy(rho, (X, Z), _SHORT, BL, fam, {"theta": theta})
    if fam == "general":
        if theta_minus is None or theta_plus is None:
            raise DomainError("general family needs theta_plus and theta_minus")
        if not 0 < theta_minus < np.pi / 2:
            raise DomainError("theta_minus must lie in (0, pi/2)")
        if not -1e-12 <= theta_plus <= np.pi / 2 + 1e-12:
            raise DomainError("theta_plus must lie in [0, pi/2]")
        BL = (_rot(theta_plus - theta_minus), _rot(theta_plus + theta_minus))
        return QubitStrategy(rho, (X, Z), _SHORT, BL, fam,
                             {"theta_plus": theta_plus, "theta_minus": theta_minus})
    if fam == "counterexample":
        parent = ParentPOVM.deterministic({(0, 0): (I2 + Z) / 2, (1, 1): (I2 - Z) / 2})
        BL = (parent.observable(0), parent.observable(1))
        BS = ((Z + X) / np.sqrt(2), (Z - X) / np.sqrt(2))
        return QubitStrategy(rho, (Z, X), BS, BL, fam, {}, parent)
    raise DomainError(f"unknown strategy family {family!r}")


def family_for_table(family: str, theta: Optional[float] = None, theta_minus=None,
                     theta_plus=None) -> QubitStrategy:
    """``make_strategy`` with the BB84/CHSH aliases used on the command line."""
    f = family.lower()
    if f == "chsh":
        return make_strategy("anticommuting", np.pi / 4)
    if f == "bb84":
        return make_strategy("anticommuting", 0.0)
    return make_strategy(family, theta=theta, theta_plus=theta_plus, theta_minus=theta_minus)


def born_correlations(strategy: QubitStrategy) -> CorrelationTable:
    """p(a, b | x, k) = Tr[rho (1 + (-1)^a A_x)/2 (x) (1 + (-1)^b B_k)/2]."""
    rho = strategy.state
    dA, dB = strategy.dims
    sc = strategy.scenario
    Bs = list(strategy.BS) + list(strategy.BL)
    p = np.zeros((2, 2, sc.m_A, sc.m_B))
    for x, Ax in enumerate(strategy.A):
        PA = [(np.eye(dA) + Ax) / 2, (np.eye(dA) - Ax) / 2]
        for k, Bk in enumerate(Bs):
            PB = [(np.eye(dB) + Bk) / 2, (np.eye(dB) - Bk) / 2]
            for a in range(2):
                for b in range(2):
                    p[a, b, x, k] = np.trace(rho @ np.kron(PA[a], PB[b])).real
    return CorrelationTable(sc, p, tol=1e-10)


def povm_correlations(state: np.ndarray, A: Sequence[Sequence[np.ndarray]],
                      B: Sequence[Sequence[np.ndarray]], scenario: RoutedScenario,
                      tol: float = 1e-9) -> CorrelationTable:
    """Born-rule table from general POVMs ``A[x][a]`` and ``B[k][b]``."""
    p = np.zeros((scenario.out_A, scenario.out_B, scenario.m_A, scenario.m_B))
    for x, Ax in enumerate(A):
        for k, Bk in enumerate(B):
            for a, Ma in enumerate(Ax):
                for b, Mb in enumerate(Bk):
                    p[a, b, x, k] = np.trace(state @ np.kron(Ma, Mb)).real
    p = np.clip(p, 0.0, 1.0)
    p /= p.sum(axis=(0, 1), keepdims=True)
    return CorrelationTable(scenario, p, tol=tol)


def _depolarize(O: np.ndarray, v: float) -> np.ndarray:
    d = O.shape[0]
    return v * O + (1 - v) * np.trace(O).real / d * np.eye(d)


def _check_vis(*vs):
    for v in vs:
        if v is None or not 0.0 <= v <= 1.0:
            raise DomainError(f"visibility {v} outside [0, 1]")


def apply_visibility(strategy: QubitStrategy, mode: str, v: Optional[float] = None,
                     v_S: Optional[float] = None, v_L: Optional[float] = None,
                     nu: Optional[float] = None) -> QubitStrategy:
    """White-noise models.

    ``mode="long"`` depolarizes only the long path with visibility ``v``;
    ``mode="split"`` gives A and B_S visibility ``v_S`` and B_L ``v_L``;
    ``mode="local"`` mixes the state with white noise, weight ``nu**2``.
    """
    if mode == "long":
        _check_vis(v)
        BL = tuple(_depolarize(O, v) for O in strategy.BL)
        return replace(strategy, BL=BL, params={**strategy.params, "v": v}, parent=None)
    if mode == "split":
        _check_vis(v_S, v_L)
        return replace(strategy,
                       A=tuple(_depolarize(O, v_S) for O in strategy.A),
                       BS=tuple(_depolarize(O, v_S) for O in strategy.BS),
                       BL=tuple(_depolarize(O, v_L) for O in strategy.BL),
                       params={**strategy.params, "v_S": v_S, "v_L": v_L}, parent=None)
    if mode == "local":
        _check_vis(nu)
        d = strategy.state.shape[0]
        rho = nu ** 2 * strategy.state + (1 - nu ** 2) * np.eye(d) / d
        return replace(strategy, state=rho, params={**strategy.params, "nu": nu})
    raise DomainError(f"unknown visibility mode {mode!r}")


def psd_dominance_check(matrices: Sequence[np.ndarray], cap: np.ndarray,
                        tol: float = PSD_TOL) -> bool:
    """True iff ``cap - C`` is positive semidefinite (up to ``tol``) for every C."""
    return all(min_eig(np.asarray(cap) - np.asarray(C)) >= -tol for C in matrices)


def parent_povm_appD(theta_minus: float, theta_plus: float = 0.0) -> ParentPOVM:
    """Three-outcome joint measurement of the two lossy long-path observables.

    The marginals reproduce ``eta B_y + (1 - eta) 1`` with
    ``eta = 1 / (1 + cos(theta_minus))`` for the general-family observables.
    The construction is written for ``theta_plus = 0`` and rotated in the
    X-Z plane for other values.
    """
    if not 0 < theta_minus < np.pi / 2:
        raise DomainError("theta_minus must lie strictly inside (0, pi/2)")
    if not -1e-12 <= theta_plus <= np.pi / 2 + 1e-12:
        raise DomainError("theta_plus must lie in [0, pi/2]")
    c, s = np.cos(theta_minus), np.sin(theta_minus)
    cp, sp = np.cos(theta_plus), np.sin(theta_plus)
    Zr = cp * Z + sp * X
    Xr = cp * X - sp * Z
    rest = (1 - c) / (1 + c) * (I2 + Zr) / 2 + (I2 - Zr) / 2
    els = {
        (0, 0): c / (1 + c) * (I2 + Zr),
        (0, 1): 0.5 * (-(s / (1 + c)) * Xr + rest),
        (1, 0): 0.5 * ((s / (1 + c)) * Xr + rest),
        (1, 1): np.zeros((2, 2)),
    }
    return ParentPOVM.deterministic(els)


@dataclass(frozen=True)
class JmWitness:
    """Linear witness sum_l Tr[C_l N_l] * prefactor over parent POVMs.

    Each ``C_l`` is dominated by ``cap``, so the witness is at most
    ``prefactor * Tr[cap]`` on any parent POVM.
    """

    C: Dict[Tuple[int, ...], np.ndarray]
    cap: np.ndarray
    prefactor: float = 1.0

    @property
    def bound(self) -> float:
        return float(self.prefactor * np.trace(self.cap).real)

    def dominated(self, tol: float = PSD_TOL) -> bool:
        return psd_dominance_check(list(self.C.values()), self.cap, tol)

    def value(self, povm: ParentPOVM) -> float:
        tot = 0.0
        for lab, N in zip(povm.labels, povm.elements):
            if lab in self.C:
                tot += np.trace(self.C[lab] @ N).real
        return float(self.prefactor * tot)


def jm_witness(family: str, theta_minus: float = np.pi / 4) -> JmWitness:
    """Joint-measurability witnesses for pairs of long-path measurements.

    ``simple``: from ``J^0_L`` with Tsirelson short path, cap sqrt(2) 1.
    ``tilted``: from the two-angle expression, cap ``1 + cos(theta_minus) Z``.
    ``tilde``: three-outcome version with no-click label 2, cap 1/2.
    """
    if family in ("simple", "simpleJM"):
        C = {(b0, b1): (-1) ** b0 * Z + (-1) ** b1 * X for b0 in range(2) for b1 in range(2)}
        return JmWitness(C, np.sqrt(2) * I2, 0.5)
    if family in ("tilted", "jpm"):
        c, s = np.cos(theta_minus), np.sin(theta_minus)
        C = {}
        for b0, b1 in itertools.product(range(2), repeat=2):
            if b0 == b1:
                C[(b0, b1)] = (-1) ** b0 * (Z + c * I2)
            else:
                C[(b0, b1)] = (-1) ** b1 * s * X
        return JmWitness(C, I2 + c * Z, 1.0)
    if family in ("tilde", "tildeJM"):
        C = {}
        for b0, b1 in itertools.product(range(3), repeat=2):
            C[(b0, b1)] = ((b0 != 2) * (-1) ** b0 * Z + (b1 != 2) * (-1) ** b1 * X
                           - (2 - (b0 == 2) - (b1 == 2)) * I2 / 2)
        return JmWitness(C, I2 / 2, 0.5)
    raise DomainError(f"unknown witness family {family!r}")


def jm_saturating_povm(family: str) -> ParentPOVM:
    """Parent POVMs attaining the joint-measurability witness bounds."""
    if family in ("simple", "simpleJM"):
        B = (Z + X) / np.sqrt(2)
        return ParentPOVM.deterministic({(0, 0): (I2 + B) / 2, (1, 1): (I2 - B) / 2,
                                         (0, 1): np.zeros((2, 2)), (1, 0): np.zeros((2, 2))})
    if family in ("tilde", "tildeJM"):
        els = {lab: np.zeros((2, 2)) for lab in itertools.product(range(3), repeat=2)}
        els[(0, 2)] = (I2 + Z) / 4
        els[(1, 2)] = (I2 - Z) / 4
        els[(2, 0)] = (I2 + X) / 4
        els[(2, 1)] = (I2 - X) / 4
        return ParentPOVM.deterministic(els, n_out=3)
    raise DomainError(f"unknown saturating family {family!r}")


def quantum_cap_lambdas(theta_minus: float) -> Tuple[float, float, float]:
    """Constants of the caps lambda0 1 +- lambda1 X + lambda3 Z (quantum bound)."""
    c, s = np.cos(theta_minus), np.sin(theta_minus)
    r = np.sqrt(1 + s ** 2)
    l0 = r
    l1 = -s + s * np.sqrt((2 - 2 * c * r) / (1 + s ** 2))
    l3 = c / r
    return l0, l1, l3


def ket(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def format_matrix(M: np.ndarray) -> str:
    """Row-major 'real imag' pairs, one matrix row per line."""
    M = np.asarray(M, dtype=complex)
    rows = [" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row) for row in M]
    return f"{M.shape[0]} {M.shape[1]}\n" + "\n".join(rows) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    lines = [l for l in text.strip().splitlines() if l.strip()]
    r, c = map(int, lines[0].split())
    vals = np.array([float(t) for l in lines[1:r + 1] for t in l.split()])
    return (vals[0::2] + 1j * vals[1::2]).reshape(r, c)


def export_strategy(strategy: QubitStrategy) -> str:
    """Text dump of a strategy: named blocks of row-major complex pairs."""
    parts = ["# state\n" + format_matrix(strategy.state)]
    for name in ("A", "BS", "BL"):
        for i, O in enumerate(getattr(strategy, name)):
            parts.append(f"# {name}{i}\n" + format_matrix(O))
    return "".join(parts)
