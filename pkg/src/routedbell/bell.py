"""Scenario and correlation data model for routed Bell tests.

A routed Bell test has one party A with ``m_A`` settings and a second party
whose particle is switched either to a near device (``z = "S"``) or to a far
device (``z = "L"``).  All of Bob's (setting, device) pairs are flattened into
a single index ``k``: the ``m_BS`` short-path settings come first, followed by
the ``m_BL`` long-path settings.

Outcomes are integer labels.  For binary devices label 0 means +1 and label 1
means -1.  When the scenario has a no-click outcome it is always the last
label of each party and carries the value 0 in correlators.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DomainError,
    IncompatibleScenarioError,
    InvalidInputError,
    MissingMomentError,
    TooLargeError,
)

PROB_TOL = 1e-12


@dataclass(frozen=True)
class RoutedScenario:
    """Input and output cardinalities of a routed Bell test.

    Parameters
    ----------
    m_A, d_A : int
        Number of settings and outcomes of party A.
    m_BS, d_BS : int
        Settings and outcomes of the short-path device.  ``m_BS = 0`` is a
        standard Bell test without a switch.
    m_BL, d_BL : int
        Settings and outcomes of the long-path device.
    has_noclick : bool
        Whether every device has an extra no-click outcome.
    """

    m_A: int = 2
    d_A: int = 2
    m_BS: int = 2
    d_BS: int = 2
    m_BL: int = 2
    d_BL: int = 2
    has_noclick: bool = False

    def __post_init__(self):
        for name in ("m_A", "d_A", "d_BS", "m_BL", "d_BL"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.m_BS < 0:
            raise DomainError("m_BS must be >= 0")

    @property
    def m_B(self) -> int:
        return self.m_BS + self.m_BL

    @property
    def out_A(self) -> int:
        """Size of A's outcome alphabet including the no-click label."""
        return self.d_A + int(self.has_noclick)

    @property
    def out_B(self) -> int:
        return max(self.d_BS, self.d_BL) + int(self.has_noclick)

    @property
    def is_binary(self) -> bool:
        return self.d_A == 2 and self.d_BS == 2 and self.d_BL == 2

    def bob_settings(self) -> List[Tuple[int, str]]:
        """Bob's (y, z) pairs in flattened order."""
        return [(y, "S") for y in range(self.m_BS)] + [(y, "L") for y in range(self.m_BL)]

    def bob_index(self, y: int, z: str) -> int:
        z = z.upper()
        if z == "S":
            if not 0 <= y < self.m_BS:
                raise DomainError(f"short-path setting {y} out of range")
            return y
        if z == "L":
            if not 0 <= y < self.m_BL:
                raise DomainError(f"long-path setting {y} out of range")
            return self.m_BS + y
        raise DomainError(f"unknown path label {z!r}")

    def device_of(self, k: int) -> str:
        return "S" if k < self.m_BS else "L"

    def with_noclick(self, flag: bool = True) -> "RoutedScenario":
        return RoutedScenario(self.m_A, self.d_A, self.m_BS, self.d_BS,
                              self.m_BL, self.d_BL, bool(flag))

    def same_cardinalities(self, other: "RoutedScenario") -> bool:
        return (self.m_A, self.d_A, self.m_BS, self.d_BS, self.m_BL, self.d_BL) == (
            other.m_A, other.d_A, other.m_BS, other.d_BS, other.m_BL, other.d_BL)

    def to_dict(self) -> dict:
        return dict(m_A=self.m_A, d_A=self.d_A, m_BS=self.m_BS, d_BS=self.d_BS,
                    m_BL=self.m_BL, d_BL=self.d_BL, has_noclick=self.has_noclick)


CHSH_SCENARIO = RoutedScenario()


def _outcome_values(d: int, has_noclick: bool, size: int) -> np.ndarray:
    """Correlator value attached to each outcome label (+1, -1, then 0)."""
    vals = np.zeros(size)
    if d == 2:
        vals[0], vals[1] = 1.0, -1.0
    else:
        vals[:d] = np.nan
    return vals


@dataclass(frozen=True, eq=False)
class CorrelationTable:
    """Joint distribution p(a, b | x, k) of a routed Bell test.

    ``entries`` has shape ``(out_A, out_B, m_A, m_B)``.  The constructor
    checks positivity, normalization and no-signalling.
    """

    scenario: RoutedScenario
    entries: np.ndarray
    tol: float = field(default=PROB_TOL, repr=False)

    def __post_init__(self):
        sc = self.scenario
        p = np.array(self.entries, dtype=float)
        shape = (sc.out_A, sc.out_B, sc.m_A, sc.m_B)
        if p.shape != shape:
            raise IncompatibleScenarioError(f"entries have shape {p.shape}, expected {shape}")
        p.setflags(write=False)
        object.__setattr__(self, "entries", p)
        check_table(self, self.tol)

    def __eq__(self, other):
        return (isinstance(other, CorrelationTable) and self.scenario == other.scenario
                and np.array_equal(self.entries, other.entries))

    @cached_property
    def moments(self) -> np.ndarray:
        """Array ``M[i, j, x, k] = <A_x^i B_k^j>`` for powers i, j in 0..2."""
        sc = self.scenario
        vA = _outcome_values(sc.d_A, sc.has_noclick, sc.out_A)
        vB = _outcome_values(max(sc.d_BS, sc.d_BL), sc.has_noclick, sc.out_B)
        PA = np.stack([vA ** i for i in range(3)])
        PB = np.stack([vB ** j for j in range(3)])
        return np.einsum("ia,jb,abxk->ijxk", PA, PB, self.entries)

    def marginal_A(self) -> np.ndarray:
        """p(a | x), read off the first Bob setting."""
        return self.entries.sum(axis=1)[:, :, 0]

    def marginal_B(self) -> np.ndarray:
        """p(b | k), read off the first A setting."""
        return self.entries.sum(axis=0)[:, 0, :]

    def correlators(self) -> "ExtendedCorrelators":
        return ExtendedCorrelators.from_table(self)

    def to_json(self) -> str:
        return json.dumps({"scenario": self.scenario.to_dict(),
                           "probabilities": self.entries.ravel(order="C").tolist()})

    @classmethod
    def from_json(cls, text: str) -> "CorrelationTable":
        data = json.loads(text)
        sc = RoutedScenario(**data["scenario"])
        p = np.asarray(data["probabilities"], dtype=float)
        return cls(sc, p.reshape(sc.out_A, sc.out_B, sc.m_A, sc.m_B))


def check_table(table: CorrelationTable, tol: float = PROB_TOL) -> None:
    """Raise :class:`InvalidInputError` unless the table is a valid behaviour."""
    sc = table.scenario
    p = table.entries
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("non-finite probability")
    if p.min() < -tol or p.max() > 1 + tol:
        raise InvalidInputError("probability outside [0, 1]")
    norm = p.sum(axis=(0, 1))
    if np.abs(norm - 1).max() > tol:
        raise InvalidInputError(f"normalization violated by {np.abs(norm - 1).max():.3g}")
    # labels a device cannot output
    for k in range(sc.m_B):
        d = sc.d_BS if k < sc.m_BS else sc.d_BL
        pad = p[:, d:sc.out_B - int(sc.has_noclick), :, k]
        if pad.size and np.abs(pad).max() > tol:
            raise InvalidInputError("mass on an outcome label the device lacks")
    pa = p.sum(axis=1)  # (a, x, k)
    if np.abs(pa - pa[:, :, :1]).max() > tol:
        raise InvalidInputError("A's marginal depends on Bob's setting")
    pb = p.sum(axis=0)  # (b, x, k)
    if np.abs(pb - pb[:, :1, :]).max() > tol:
        raise InvalidInputError("Bob's marginal depends on A's setting")


def is_valid_table(table: CorrelationTable, tol: float = PROB_TOL) -> bool:
    try:
        check_table(table, tol)
    except InvalidInputError:
        return False
    return True


# ----------------------------------------------------------------------------
# Correlators
# ----------------------------------------------------------------------------

# coefficient of each outcome projector on (1, O, O^2)
_BINARY_PROJ = np.array([[0.5, 0.5, 0.0], [0.5, -0.5, 0.0]])
_TRINARY_PROJ = np.array([[0.0, 0.5, 0.5], [0.0, -0.5, 0.5], [1.0, 0.0, -1.0]])


@dataclass(frozen=True)
class ExtendedCorrelators:
    """Expectation values of observables and of their squares.

    Squared moments (click indicators) are only populated for scenarios with
    a no-click outcome; otherwise they are ``None``.
    """

    scenario: RoutedScenario
    mean_A: np.ndarray
    mean_B: np.ndarray
    mean_AB: np.ndarray
    mean_A2: Optional[np.ndarray] = None
    mean_B2: Optional[np.ndarray] = None
    mean_A2B: Optional[np.ndarray] = None
    mean_AB2: Optional[np.ndarray] = None
    mean_A2B2: Optional[np.ndarray] = None

    @classmethod
    def from_table(cls, table: CorrelationTable) -> "ExtendedCorrelators":
        sc = table.scenario
        if not sc.is_binary:
            raise InvalidInputError("correlators need binary outcomes")
        M = table.moments
        kw = dict(mean_A=M[1, 0, :, 0], mean_B=M[0, 1, 0, :], mean_AB=M[1, 1])
        if sc.has_noclick:
            kw.update(mean_A2=M[2, 0, :, 0], mean_B2=M[0, 2, 0, :], mean_A2B=M[2, 1],
                      mean_AB2=M[1, 2], mean_A2B2=M[2, 2])
        return cls(sc, **kw)

    def moment_array(self) -> np.ndarray:
        sc = self.scenario
        M = np.zeros((3, 3, sc.m_A, sc.m_B))
        M[0, 0] = 1.0
        M[1, 0] = self.mean_A[:, None]
        M[0, 1] = self.mean_B[None, :]
        M[1, 1] = self.mean_AB
        if sc.has_noclick:
            M[2, 0] = self.mean_A2[:, None]
            M[0, 2] = self.mean_B2[None, :]
            M[2, 1] = self.mean_A2B
            M[1, 2] = self.mean_AB2
            M[2, 2] = self.mean_A2B2
        return M

    def to_table(self, tol: float = PROB_TOL) -> CorrelationTable:
        """Rebuild the probability table; exact for binary (+ no-click)."""
        sc = self.scenario
        proj = _TRINARY_PROJ if sc.has_noclick else _BINARY_PROJ
        M = self.moment_array()
        p = np.einsum("ai,bj,ijxk->abxk", proj, proj, M)
        return CorrelationTable(sc, p, tol=tol)


def table_from_moments(scenario: RoutedScenario, M: np.ndarray,
                       tol: float = PROB_TOL) -> CorrelationTable:
    """Table from a moment array ``M[i, j, x, k]`` (powers 0..2)."""
    proj = _TRINARY_PROJ if scenario.has_noclick else _BINARY_PROJ
    n = proj.shape[1]
    p = np.einsum("ai,bj,ijxk->abxk", proj, proj, np.asarray(M)[:n, :n])
    return CorrelationTable(scenario, p, tol=tol)


# ----------------------------------------------------------------------------
# Efficiencies and detection maps
# ----------------------------------------------------------------------------

class DetectionMode(str, enum.Enum):
    KEEP = "keep"  # no-click kept as a third outcome
    BIN = "bin"    # no-click relabelled as +1


@dataclass(frozen=True)
class EfficiencyVector:
    eta_A: float
    eta_BS: float
    eta_BL: float
    mode: DetectionMode = DetectionMode.BIN

    def __post_init__(self):
        for name in ("eta_A", "eta_BS", "eta_BL"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}={v} outside [0, 1]")
        object.__setattr__(self, "mode", DetectionMode(self.mode))


def _bob_etas(sc: RoutedScenario, eff: EfficiencyVector) -> np.ndarray:
    return np.array([eff.eta_BS if k < sc.m_BS else eff.eta_BL for k in range(sc.m_B)])


def apply_detection(table: CorrelationTable, eff: EfficiencyVector) -> CorrelationTable:
    """Correlations seen with imperfect detectors.

    In ``KEEP`` mode each device independently fails to click and the
    no-click outcome is recorded.  In ``BIN`` mode a missing click is
    reported as outcome +1 (label 0).
    """
    sc = table.scenario
    if sc.has_noclick:
        raise InvalidInputError("input table already has a no-click outcome")
    p = table.entries
    pA = p.sum(axis=1)  # (a, x, k)
    pB = p.sum(axis=0)  # (b, x, k)
    eA = eff.eta_A
    eB = _bob_etas(sc, eff)[None, None, :]
    if eff.mode is DetectionMode.KEEP:
        out = sc.with_noclick(True)
        q = np.zeros((out.out_A, out.out_B, sc.m_A, sc.m_B))
        q[:-1, :-1] = eA * eB[None] * p
        q[:-1, -1] = eA * (1 - eB) * pA
        q[-1, :-1] = (1 - eA) * eB * pB
        q[-1, -1] = (1 - eA) * (1 - eB[0])
        return CorrelationTable(out, q)
    q = eA * eB[None] * p
    q[0] += (1 - eA) * eB * pB
    q[:, 0] += eA * (1 - eB) * pA
    q[0, 0] += (1 - eA) * (1 - eB[0, 0])
    return CorrelationTable(sc, q)


def bin_noclick(table: CorrelationTable) -> CorrelationTable:
    """Relabel the no-click outcome of every device as +1."""
    sc = table.scenario
    if not sc.has_noclick:
        return table
    p = table.entries
    q = p[:-1, :-1].copy()
    q[0] += p[-1, :-1]
    q[:, 0] += p[:-1, -1]
    q[0, 0] += p[-1, -1]
    return CorrelationTable(sc.with_noclick(False), q)


def deterministic_table(scenario: RoutedScenario, a: Sequence[int],
                        b: Sequence[int]) -> CorrelationTable:
    """Table of the local deterministic strategy with outcome labels a[x], b[k]."""
    p = np.zeros((scenario.out_A, scenario.out_B, scenario.m_A, scenario.m_B))
    for x in range(scenario.m_A):
        for k in range(scenario.m_B):
            p[a[x], b[k], x, k] = 1.0
    return CorrelationTable(scenario, p)


def uniform_table(scenario: RoutedScenario) -> CorrelationTable:
    q = np.zeros((scenario.out_A, scenario.out_B, scenario.m_A, scenario.m_B))
    for k in range(scenario.m_B):
        d = scenario.d_BS if k < scenario.m_BS else scenario.d_BL
        q[:scenario.d_A, :d, :, k] = 1.0 / (scenario.d_A * d)
    return CorrelationTable(scenario, q)


def mix_tables(weights: Sequence[float], tables: Sequence[CorrelationTable]) -> CorrelationTable:
    sc = tables[0].scenario
    p = sum(w * t.entries for w, t in zip(weights, tables))
    return CorrelationTable(sc, p)


def restrict_to_long_path(table: CorrelationTable) -> CorrelationTable:
    """Drop the short-path settings, leaving a standard Bell table."""
    sc = table.scenario
    out = RoutedScenario(sc.m_A, sc.d_A, 0, sc.d_BS, sc.m_BL, sc.d_BL, sc.has_noclick)
    return CorrelationTable(out, table.entries[:, :, :, sc.m_BS:])


# ----------------------------------------------------------------------------
# Bell expressions
# ----------------------------------------------------------------------------

# term key: (power of A, x, power of B, k); x = -1 when A absent, k = -1 when B absent
Term = Tuple[int, int, int, int]


@dataclass(frozen=True)
class BellExpression:
    """Linear functional on extended correlators.

    ``terms`` maps ``(i, x, j, k)`` to the coefficient of ``<A_x^i B_k^j>``.
    """

    scenario: RoutedScenario
    terms: Dict[Term, float]
    constant: float = 0.0
    name: str = ""

    def __post_init__(self):
        clean = {}
        for (i, x, j, k), c in self.terms.items():
            if i == 0:
                x = -1
            if j == 0:
                k = -1
            if i == 0 and j == 0:
                object.__setattr__(self, "constant", self.constant + c)
                continue
            if i not in (0, 1, 2) or j not in (0, 1, 2):
                raise DomainError("powers must be 0, 1 or 2")
            if i and not 0 <= x < self.scenario.m_A:
                raise DomainError(f"A setting {x} out of range")
            if j and not 0 <= k < self.scenario.m_B:
                raise DomainError(f"Bob setting {k} out of range")
            key = (i, x, j, k)
            clean[key] = clean.get(key, 0.0) + float(c)
        object.__setattr__(self, "terms", {k: v for k, v in clean.items() if v != 0.0})

    @property
    def uses_squares(self) -> bool:
        return any(i == 2 or j == 2 for (i, _, j, _) in self.terms)

    def __add__(self, other: "BellExpression") -> "BellExpression":
        if not self.scenario.same_cardinalities(other.scenario):
            raise IncompatibleScenarioError("cannot add expressions on different scenarios")
        t = dict(self.terms)
        for key, c in other.terms.items():
            t[key] = t.get(key, 0.0) + c
        sc = self.scenario if self.scenario.has_noclick else other.scenario
        return BellExpression(sc, t, self.constant + other.constant,
                              f"({self.name})+({other.name})")

    def __mul__(self, s: float) -> "BellExpression":
        return BellExpression(self.scenario, {k: s * v for k, v in self.terms.items()},
                              s * self.constant, f"{s:g}*{self.name}")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def shifted(self, c: float) -> "BellExpression":
        return BellExpression(self.scenario, dict(self.terms), self.constant + c, self.name)


def correlator(scenario: RoutedScenario, x: Optional[int] = None, y: Optional[int] = None,
               z: str = "L", pa: int = 1, pb: int = 1, coef: float = 1.0) -> BellExpression:
    """Single-moment expression ``coef * <A_x^pa B_{yz}^pb>``."""
    if x is None:
        pa, x = 0, -1
    if y is None:
        pb, k = 0, -1
    else:
        k = scenario.bob_index(y, z)
    return BellExpression(scenario, {(pa, x, pb, k): coef}, name="corr")


def _need_two(scenario: RoutedScenario, z: str):
    m = scenario.m_BS if z.upper() == "S" else scenario.m_BL
    if scenario.m_A < 2 or m < 2:
        raise DomainError("expression needs two settings on each side")


def chsh(scenario: RoutedScenario = CHSH_SCENARIO, z: str = "L",
         minus: Tuple[int, int] = (1, 1)) -> BellExpression:
    """CHSH expression on device ``z``; ``minus`` picks the negative correlator."""
    _need_two(scenario, z)
    terms = {}
    for x in range(2):
        for y in range(2):
            s = -1.0 if (x, y) == tuple(minus) else 1.0
            terms[(1, x, 1, scenario.bob_index(y, z))] = s
    return BellExpression(scenario, terms, name=f"CHSH_{z.upper()}")


def chsh_variants(scenario: RoutedScenario = CHSH_SCENARIO, z: str = "L") -> List[BellExpression]:
    """The eight relabelled CHSH expressions (all nontrivial facets of 2222)."""
    out = []
    for minus in itertools.product(range(2), repeat=2):
        e = chsh(scenario, z, minus)
        out += [e, -e]
    return out


def jtheta(scenario: RoutedScenario = CHSH_SCENARIO, theta: float = 0.0,
           z: str = "L") -> BellExpression:
    """Tilted CHSH family t<A0B0> + <A0B1> + <A1B0> - t<A1B1>, t = tan(theta)."""
    _need_two(scenario, z)
    t = np.tan(theta)
    k0, k1 = scenario.bob_index(0, z), scenario.bob_index(1, z)
    terms = {(1, 0, 1, k0): t, (1, 0, 1, k1): 1.0, (1, 1, 1, k0): 1.0, (1, 1, 1, k1): -t}
    return BellExpression(scenario, terms, name=f"J_theta({theta:.6g})")


def jpm(scenario: RoutedScenario = CHSH_SCENARIO, theta_plus: float = 0.0,
        theta_minus: float = np.pi / 4) -> BellExpression:
    """Long-path expression with marginal terms, tailored to two-angle B_L."""
    _need_two(scenario, "L")
    cp, sp = np.cos(theta_plus), np.sin(theta_plus)
    cm, sm = np.cos(theta_minus), np.sin(theta_minus)
    k0, k1 = scenario.bob_index(0, "L"), scenario.bob_index(1, "L")
    terms = {
        (1, 1, 1, k0): cp + sm * sp,
        (1, 1, 1, k1): cp - sm * sp,
        (1, 0, 1, k0): sp - sm * cp,
        (1, 0, 1, k1): sp + sm * cp,
        (0, -1, 1, k0): cm,
        (0, -1, 1, k1): cm,
    }
    return BellExpression(scenario, terms, name=f"J_pm({theta_plus:.6g},{theta_minus:.6g})")


def jtilde(scenario: Optional[RoutedScenario] = None, theta: float = 0.0) -> BellExpression:
    """Long-path expression for no-click data, penalizing Bob's click rate."""
    if scenario is None:
        scenario = CHSH_SCENARIO.with_noclick(True)
    _need_two(scenario, "L")
    c, s = np.cos(theta), np.sin(theta)
    k0, k1 = scenario.bob_index(0, "L"), scenario.bob_index(1, "L")
    terms = {
        (1, 1, 1, k0): c,
        (1, 1, 1, k1): -s,
        (1, 0, 1, k0): s,
        (1, 0, 1, k1): c,
        (0, -1, 2, k0): -0.5,
        (0, -1, 2, k1): -0.5,
    }
    return BellExpression(scenario, terms, name=f"J_tilde({theta:.6g})")


def evaluate(expr: BellExpression, table: CorrelationTable) -> float:
    """Value of a Bell expression on a correlation table."""
    esc, tsc = expr.scenario, table.scenario
    if not esc.same_cardinalities(tsc):
        raise IncompatibleScenarioError(f"expression scenario {esc} vs table scenario {tsc}")
    if expr.uses_squares and not tsc.has_noclick:
        raise MissingMomentError("expression uses click indicators but the table has no no-click outcome")
    M = table.moments
    val = expr.constant
    for (i, x, j, k), c in expr.terms.items():
        val += c * M[i, j, max(x, 0), max(k, 0)]
    return float(val)


def _feature_matrix(expr: BellExpression) -> np.ndarray:
    """W[(i, x), (j, k)] with row/col 0 for the absent party."""
    sc = expr.scenario
    W = np.zeros((1 + 2 * sc.m_A, 1 + 2 * sc.m_B))
    W[0, 0] = expr.constant
    for (i, x, j, k), c in expr.terms.items():
        r = 0 if i == 0 else 1 + 2 * x + (i - 1)
        col = 0 if j == 0 else 1 + 2 * k + (j - 1)
        W[r, col] += c
    return W


def _features(assign: np.ndarray) -> np.ndarray:
    n, m = assign.shape
    F = np.ones((n, 1 + 2 * m))
    F[:, 1::2] = assign
    F[:, 2::2] = assign ** 2
    return F


def local_bound(expr: BellExpression, alphabet: str = "binary",
                max_assignments: int = 10 ** 6, return_argmax: bool = False):
    """Exact maximum over deterministic local assignments.

    Parameters
    ----------
    expr : BellExpression
    alphabet : {"binary", "noclick"}
        ``"binary"`` uses outcomes +-1; ``"noclick"`` adds the value 0.
    max_assignments : int
        Guard on the number of assignments per party.
    return_argmax : bool
        Also return the optimal value vectors ``(a, b)``.
    """
    sc = expr.scenario
    vals = {"binary": [1.0, -1.0], "noclick": [1.0, -1.0, 0.0]}
    if alphabet not in vals:
        raise DomainError(f"unknown alphabet {alphabet!r}")
    v = vals[alphabet]
    if len(v) ** sc.m_A > max_assignments or len(v) ** sc.m_B > max_assignments:
        raise TooLargeError("deterministic enumeration too large")
    aa = np.array(list(itertools.product(v, repeat=sc.m_A)))
    bb = np.array(list(itertools.product(v, repeat=sc.m_B)))
    values = _features(aa) @ _feature_matrix(expr) @ _features(bb).T
    idx = np.unravel_index(np.argmax(values), values.shape)
    best = float(values[idx])
    if return_argmax:
        return best, aa[idx[0]], bb[idx[1]]
    return best


def algebraic_bound(expr: BellExpression) -> float:
    """Bound obtained by letting every correlator reach its extreme separately."""
    total = expr.constant
    for (i, x, j, k), c in expr.terms.items():
        even = (i in (0, 2)) and (j in (0, 2))
        total += max(c, 0.0) if even else abs(c)
    return float(total)


def chsh_max(table: CorrelationTable, z: str = "L") -> float:
    """Largest value among the relabelled CHSH expressions."""
    sc = table.scenario.with_noclick(False)
    return max(evaluate(BellExpression(table.scenario, e.terms), table)
               for e in chsh_variants(sc, z))
