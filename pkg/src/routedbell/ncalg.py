"""Operator words, commutation relations and symbolic moment matrices.

Letters are the dichotomic observables ``A_x``, ``BS_y`` and ``BL_y`` (and,
for data with a no-click outcome, their squares).  A word is a tuple of
integer letter codes.  Each code combines a *vertex* (party and setting) and
a power::

    code = 2 * vertex + (power - 1)

so sorting codes sorts by the global letter order with every square right
after its base letter.

Words are put into normal form by treating the commutation relations as a
partially commutative monoid: the lexicographically smallest representative
of the commutation class is built greedily, adjacent letters on the same
vertex are merged, and both steps repeat until nothing changes.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .bell import BellExpression, RoutedScenario
from .errors import DomainError, LevelTooLowError

Word = Tuple[int, ...]
IDENTITY: Word = ()


class ModelClass(str, enum.Enum):
    Q = "q"      # no constraint beyond A commuting with Bob
    Q_SR = "srq"  # long-path observables commute (jointly measurable)
    M_QQ = "mqq"  # short- and long-path observables commute
    M_QC = "mqc"  # both

    @classmethod
    def parse(cls, s) -> "ModelClass":
        if isinstance(s, cls):
            return s
        key = str(s).lower().replace("_", "")
        alias = {"q": cls.Q, "qsr": cls.Q_SR, "srq": cls.Q_SR, "sr": cls.Q_SR,
                 "mqq": cls.M_QQ, "mqc": cls.M_QC}
        if key not in alias:
            raise DomainError(f"unknown correlation class {s!r}")
        return alias[key]


class OutcomeMode(str, enum.Enum):
    INVOLUTIVE = "involutive"  # X^2 = 1
    CUBIC = "cubic"            # X^3 = X, X^2 kept as a letter


@dataclass(frozen=True)
class Letter:
    party: str  # "A", "BS" or "BL"
    setting: int
    power: int = 1


@dataclass(frozen=True)
class RelationSet:
    """Commutation and power relations of one correlation class."""

    scenario: RoutedScenario
    model: ModelClass = ModelClass.Q
    mode: OutcomeMode = OutcomeMode.INVOLUTIVE
    # parties whose observables square to the identity even in cubic mode
    # (lossless devices, whose no-click outcome never occurs)
    unit_square: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "model", ModelClass.parse(self.model))
        object.__setattr__(self, "mode", OutcomeMode(self.mode))
        us = frozenset(p.upper() for p in self.unit_square)
        if not us <= {"A", "BS", "BL"}:
            raise DomainError(f"unknown party in unit_square: {sorted(us)}")
        object.__setattr__(self, "unit_square", us)

    def involutive(self, v: int) -> bool:
        """Whether vertex ``v`` obeys X^2 = 1."""
        return self.mode is OutcomeMode.INVOLUTIVE or self.party_of(v) in self.unit_square

    # vertices: 0..m_A-1 are A, then BS, then BL
    @property
    def n_vertices(self) -> int:
        return self.scenario.m_A + self.scenario.m_BS + self.scenario.m_BL

    def party_of(self, v: int) -> str:
        sc = self.scenario
        if v < sc.m_A:
            return "A"
        if v < sc.m_A + sc.m_BS:
            return "BS"
        return "BL"

    def vertex(self, party: str, setting: int) -> int:
        sc = self.scenario
        party = party.upper()
        size = {"A": sc.m_A, "BS": sc.m_BS, "BL": sc.m_BL}[party]
        if not 0 <= setting < size:
            raise DomainError(f"setting {setting} out of range for {party}")
        off = {"A": 0, "BS": sc.m_A, "BL": sc.m_A + sc.m_BS}[party]
        return off + setting

    def bob_vertex(self, k: int) -> int:
        """Vertex of Bob's flattened setting index k."""
        return self.scenario.m_A + k

    def commute(self, v: int, w: int) -> bool:
        if v == w:
            return True
        p, q = self.party_of(v), self.party_of(w)
        if p == q:
            return p == "BL" and self.model in (ModelClass.Q_SR, ModelClass.M_QC)
        if "A" in (p, q):
            return True
        return self.model in (ModelClass.M_QQ, ModelClass.M_QC)

    @property
    def commute_table(self) -> np.ndarray:
        n = self.n_vertices
        return np.array([[self.commute(v, w) for w in range(n)] for v in range(n)])

    def letter(self, party: str, setting: int, power: int = 1) -> int:
        if power not in (1, 2):
            raise DomainError("letter power must be 1 or 2")
        v = self.vertex(party, setting)
        if power == 2 and self.involutive(v):
            raise DomainError("squares are trivial for involutive observables")
        return 2 * v + power - 1

    def word(self, *letters: Tuple[str, int]) -> Word:
        return tuple(self.letter(*l) for l in letters)

    def describe(self, w: Word) -> str:
        if not w:
            return "1"
        out = []
        for code in w:
            v, pw = divmod(code, 2)
            p = self.party_of(v)
            s = v - self.vertex(p, 0)
            name = f"A{s}" if p == "A" else f"B{s}{p[1]}"
            out.append(name + ("^2" if pw else ""))
        return "*".join(out)


def _merge_power(p: int, q: int, mode: OutcomeMode) -> int:
    """Power of X^p X^q after reduction; 0 means identity."""
    if mode is OutcomeMode.INVOLUTIVE:
        return (p + q) % 2
    n = p + q
    return 1 if n % 2 else 2


@lru_cache(maxsize=None)
def _commute_cache(rel: RelationSet) -> Tuple[Tuple[bool, ...], ...]:
    return tuple(tuple(row) for row in rel.commute_table.tolist())


@lru_cache(maxsize=None)
def _power_modes(rel: RelationSet) -> Tuple[OutcomeMode, ...]:
    return tuple(OutcomeMode.INVOLUTIVE if rel.involutive(v) else OutcomeMode.CUBIC
                 for v in range(rel.n_vertices))


def _lex_normal(w: Word, comm) -> Word:
    rest = list(w)
    out = []
    while rest:
        best = None
        for i, c in enumerate(rest):
            v = c >> 1
            if all(comm[v][d >> 1] for d in rest[:i]):
                if best is None or c < rest[best]:
                    best = i
        out.append(rest.pop(best))
    return tuple(out)


def _merge_adjacent(w: Word, modes: Sequence[OutcomeMode]) -> Tuple[Word, bool]:
    out: List[int] = []
    changed = False
    for c in w:
        if out and (out[-1] >> 1) == (c >> 1):
            v = c >> 1
            p = _merge_power((out[-1] & 1) + 1, (c & 1) + 1, modes[v])
            out.pop()
            changed = True
            if p:
                out.append(2 * v + p - 1)
        else:
            out.append(c)
    return tuple(out), changed


def canonicalize(word: Sequence[int], rel: RelationSet) -> Word:
    """Unique normal form of a word under the relations of ``rel``."""
    return _canonical(tuple(word), rel)


@lru_cache(maxsize=1 << 20)
def _canonical(w: Word, rel: RelationSet) -> Word:
    comm = _commute_cache(rel)
    modes = _power_modes(rel)
    while True:
        w = _lex_normal(w, comm)
        w, changed = _merge_adjacent(w, modes)
        if not changed:
            return w


def adjoint(w: Word, rel: RelationSet) -> Word:
    return canonicalize(tuple(reversed(w)), rel)


def representative(w: Word, rel: RelationSet) -> Word:
    """Canonical word identified with its adjoint (real moment matrices)."""
    w = canonicalize(w, rel)
    r = adjoint(w, rel)
    return min(w, r, key=lambda u: (len(u), u))


def multiply(u: Word, v: Word, rel: RelationSet) -> Word:
    return canonicalize(u + v, rel)


# ----------------------------------------------------------------------------
# Level specifications
# ----------------------------------------------------------------------------

_TOKEN = re.compile(r"BS|BL|A|B")


@dataclass(frozen=True)
class LevelSpec:
    """Base length ``k`` plus party-sequence patterns such as ``AABSBS``.

    Pattern tokens are ``A``, ``BS``, ``BL`` and ``B`` (any of Bob's
    devices).  A level string without a leading integer, e.g. ``"AB"``,
    has base length 1.
    """

    base: int = 1
    patterns: Tuple[Tuple[str, ...], ...] = ()

    @classmethod
    def parse(cls, text: str) -> "LevelSpec":
        if isinstance(text, LevelSpec):
            return text
        parts = [p.strip() for p in str(text).split("+")]
        if not parts or any(not p for p in parts):
            raise DomainError(f"malformed level string {text!r}")
        base = 1
        if parts[0].isdigit():
            base = int(parts[0])
            parts = parts[1:]
        pats = []
        for p in parts:
            u = p.upper().replace(" ", "")
            toks = _TOKEN.findall(u)
            if "".join(toks) != u or not toks:
                raise DomainError(f"bad pattern {p!r} in level string")
            pats.append(tuple(toks))
        return cls(base, tuple(pats))

    def __str__(self) -> str:
        return " + ".join([str(self.base)] + ["".join(p) for p in self.patterns])


def _pattern_choices(tok: str, rel: RelationSet, cubic_powers: bool) -> List[int]:
    sc = rel.scenario
    parties = {"A": ["A"], "BS": ["BS"], "BL": ["BL"], "B": ["BS", "BL"]}[tok]
    out = []
    for p in parties:
        size = {"A": sc.m_A, "BS": sc.m_BS, "BL": sc.m_BL}[p]
        for s in range(size):
            out.append(rel.letter(p, s))
    return out


def basis(spec, rel: RelationSet) -> List[Word]:
    """Canonical words of the relaxation level, identity first.

    Words are products of the observables themselves; in cubic mode a
    square such as ``A0 A0`` appears as a product of two letters, so it
    counts twice towards the length.
    """
    spec = LevelSpec.parse(spec)
    sc = rel.scenario
    letters = []
    for p, size in (("A", sc.m_A), ("BS", sc.m_BS), ("BL", sc.m_BL)):
        for s in range(size):
            letters.append(rel.letter(p, s))
    seen = {IDENTITY: 0}
    order = [IDENTITY]

    def add(w):
        w = canonicalize(w, rel)
        if w not in seen:
            seen[w] = len(order)
            order.append(w)

    for n in range(1, spec.base + 1):
        for w in itertools.product(letters, repeat=n):
            add(w)
    for pat in spec.patterns:
        choices = [_pattern_choices(t, rel, False) for t in pat]
        for w in itertools.product(*choices):
            add(w)
    head, tail = order[:1], order[1:]
    tail.sort(key=lambda u: (len(u), u))
    return head + tail


def basis_dump(words: Sequence[Word], rel: RelationSet) -> str:
    return "\n".join(rel.describe(w) for w in words) + "\n"


# ----------------------------------------------------------------------------
# Moment matrices
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MomentStructure:
    """Symbolic moment matrix over a word basis.

    ``template[i, j]`` is the variable id of entry ``(i, j)``; id 0 is the
    identity word whose moment is fixed to 1.
    """

    rel: RelationSet
    basis: Tuple[Word, ...]
    template: np.ndarray
    words: Tuple[Word, ...]  # words[v] is the representative of variable v
    index: Dict[Word, int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.basis)

    @property
    def n_vars(self) -> int:
        """Number of free moment variables (identity excluded)."""
        return len(self.words) - 1

    def var_of(self, w: Sequence[int]) -> Optional[int]:
        return self.index.get(representative(tuple(w), self.rel))

    def instantiate(self, values: np.ndarray) -> np.ndarray:
        """Numeric moment matrix from values indexed by variable id."""
        return np.asarray(values)[self.template]


def moment_structure(words: Sequence[Word], rel: RelationSet) -> MomentStructure:
    words = list(words)
    if not words or words[0] != IDENTITY:
        raise DomainError("basis must start with the identity")
    index: Dict[Word, int] = {IDENTITY: 0}
    reps = [IDENTITY]
    n = len(words)
    T = np.zeros((n, n), dtype=np.int64)
    rev = [tuple(reversed(w)) for w in words]
    for i in range(n):
        for j in range(i, n):
            r = representative(rev[i] + words[j], rel)
            v = index.get(r)
            if v is None:
                v = index[r] = len(reps)
                reps.append(r)
            T[i, j] = T[j, i] = v
    T.setflags(write=False)
    return MomentStructure(rel, tuple(words), T, tuple(reps), index)


def build_moments(level, rel: RelationSet) -> MomentStructure:
    return moment_structure(basis(level, rel), rel)


def term_word(term, rel: RelationSet) -> Word:
    """Word of the extended correlator ``<A_x^i B_k^j>``."""
    i, x, j, k = term
    if rel.mode is OutcomeMode.INVOLUTIVE and (i == 2 or j == 2):
        raise LevelTooLowError(
            "expression uses squared observables, which need cubic (no-click) relations")
    w = []
    for power, v in ((i, x), (j, rel.bob_vertex(k) if j else -1)):
        if not power:
            continue
        if power == 2 and rel.involutive(v):
            continue  # X^2 = 1
        w.append(2 * v + power - 1)
    return tuple(w)


def expression_to_moments(expr: BellExpression, ms: MomentStructure):
    """Coefficient vector over variable ids (index 0 = constant) for ``expr``.

    Returns ``(coef, constant)`` where ``coef[0]`` is always zero; the
    identity contribution is folded into ``constant``.
    """
    rel = ms.rel
    if not expr.scenario.same_cardinalities(rel.scenario):
        from .errors import IncompatibleScenarioError
        raise IncompatibleScenarioError("expression and relations use different scenarios")
    coef = np.zeros(len(ms.words))
    const = float(expr.constant)
    for term, c in expr.terms.items():
        w = term_word(term, rel)
        v = ms.var_of(w)
        if v is None:
            raise LevelTooLowError(f"monomial {rel.describe(canonicalize(w, rel))} "
                                   "is not in the moment matrix")
        if v == 0:
            const += c
        else:
            coef[v] += c
    return coef, const


def strategy_moment_values(ms: MomentStructure, state: np.ndarray,
                           A: Sequence[np.ndarray], BS: Sequence[np.ndarray],
                           BL: Sequence[np.ndarray], squares=None) -> np.ndarray:
    """Moments Tr[rho w] of an explicit operator model, indexed by variable id.

    Operators act on A's or Bob's factor of a bipartite space.  ``squares``
    optionally lists, per vertex, the local operator standing for the squared
    letter (e.g. a click projector); by default the observable is squared.
    """
    dA = A[0].shape[0]
    dB = (list(BS) + list(BL))[0].shape[0]
    local = list(A) + list(BS) + list(BL)
    sq = list(squares) if squares is not None else [O @ O for O in local]
    full = {}
    for v, (O, S) in enumerate(zip(local, sq)):
        if v < len(A):
            full[2 * v], full[2 * v + 1] = np.kron(O, np.eye(dB)), np.kron(S, np.eye(dB))
        else:
            full[2 * v], full[2 * v + 1] = np.kron(np.eye(dA), O), np.kron(np.eye(dA), S)
    vals = np.zeros(len(ms.words))
    D = state.shape[0]
    for vid, w in enumerate(ms.words):
        M = np.eye(D, dtype=complex)
        for c in w:
            M = M @ full[c]
        vals[vid] = np.trace(state @ M).real
    return vals


# ----------------------------------------------------------------------------
# Word polynomials
# ----------------------------------------------------------------------------

Poly = Dict[Word, float]


def poly(terms: Iterable[Tuple[float, Sequence[int]]], rel: RelationSet) -> Poly:
    out: Poly = {}
    for c, w in terms:
        w = canonicalize(tuple(w), rel)
        out[w] = out.get(w, 0.0) + c
    return out


def poly_add(*ps: Poly, weights: Optional[Sequence[float]] = None) -> Poly:
    weights = weights or [1.0] * len(ps)
    out: Poly = {}
    for wgt, p in zip(weights, ps):
        for w, c in p.items():
            out[w] = out.get(w, 0.0) + wgt * c
    return out


def poly_mul(p: Poly, q: Poly, rel: RelationSet) -> Poly:
    out: Poly = {}
    for u, a in p.items():
        for v, b in q.items():
            w = multiply(u, v, rel)
            out[w] = out.get(w, 0.0) + a * b
    return out


def poly_adjoint(p: Poly, rel: RelationSet) -> Poly:
    return {adjoint(w, rel): c for w, c in p.items()}


def sos_expand(squares: Iterable[Tuple[float, Poly]], rel: RelationSet) -> Poly:
    """Expand ``sum_i weight_i * P_i^dagger P_i`` into canonical words."""
    out: Poly = {}
    for wgt, P in squares:
        for w, c in poly_mul(poly_adjoint(P, rel), P, rel).items():
            out[w] = out.get(w, 0.0) + wgt * c
    return out


def poly_close(p: Poly, q: Poly, tol: float = 1e-10) -> bool:
    keys = set(p) | set(q)
    return all(abs(p.get(k, 0.0) - q.get(k, 0.0)) <= tol for k in keys)
