"""Exact face restriction of moment-matrix SDPs.

When a constraint pins a Bell expression to its operator maximum, every
feasible moment matrix is singular: a sum-of-squares decomposition
``lambda 1 - E = sum_i w_i P_i^dagger P_i`` forces ``P_i psi = 0`` and hence
``u P_i psi = 0`` for every word ``u``.  Interior-point iterations then creep
towards a face without interior, and both the primal and the dual lose
accuracy.

This module turns such null polynomials into exact null vectors of the
moment matrix, checks with a small auxiliary SDP that each batch of vectors
is *exposed* (a PSD combination of them has identically zero inner product
with the moment matrix on the affine constraint set), and restricts the
problem to the orthogonal complement.  Only exposed directions are used, so
the restricted problem has exactly the same feasible set.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import ncalg
from .ncalg import MomentStructure, Poly, RelationSet
from .sdp import SdpBuilder, SdpProblem, SdpStatus, SolveOptions, _eliminate, solve

__all__ = ["chsh_null_polys", "candidate_nulls", "is_exposed", "restrict_to_complement",
           "reduce_with_nulls", "FaceRestriction"]


def chsh_null_polys(rel: RelationSet, z: str = "S", signs=None) -> List[Poly]:
    """Null polynomials of a CHSH expression at its maximum ``2 sqrt 2``.

    For ``C = sum s_xy A_x B_y`` with ``s00 s01 + s10 s11 = 0`` (one sign
    flipped), ``4 - sqrt2 C = sum_x P_x^2 = sum_y Q_y^2`` with
    ``P_x = A_x - (s_x0 B_0 + s_x1 B_1)/sqrt2`` and
    ``Q_y = B_y - (s_0y A_0 + s_1y A_1)/sqrt2``.
    """
    if signs is None:
        signs = ((1, 1), (1, -1))
    s = np.asarray(signs, dtype=float)
    if abs(s[0, 0] * s[0, 1] + s[1, 0] * s[1, 1]) > 0:
        raise ValueError("sign pattern is not a CHSH variant")
    party = "B" + z.upper()
    A = [rel.letter("A", x) for x in range(2)]
    B = [rel.letter(party, y) for y in range(2)]
    r = 1 / np.sqrt(2)
    out = []
    for x in range(2):
        out.append(ncalg.poly([(1.0, (A[x],)), (-r * s[x, 0], (B[0],)), (-r * s[x, 1], (B[1],))], rel))
    for y in range(2):
        out.append(ncalg.poly([(1.0, (B[y],)), (-r * s[0, y], (A[0],)), (-r * s[1, y], (A[1],))], rel))
    return out


def _orth(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, sv, _ = np.linalg.svd(M, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return np.zeros((M.shape[0], 0))
    return U[:, sv > tol * max(1.0, sv[0])]


def candidate_nulls(ms: MomentStructure, polys: Sequence[Poly]) -> Tuple[np.ndarray, np.ndarray]:
    """Exact null-vector candidates in the coordinates of ``ms.basis``.

    Returns ``(K0, K1)``: orthonormal bases of the polynomials themselves
    (where expressible in the basis) and of the further vectors
    ``sum_k c_k u_k P_k`` whose words outside the basis cancel, with ``K1``
    orthogonal to ``K0``.
    """
    rel = ms.rel
    idx = {w: i for i, w in enumerate(ms.basis)}
    m = len(ms.basis)
    extra = {}
    cols = []
    for P in polys:
        for u in ms.basis:
            col = {}
            for w, c in P.items():
                cw = ncalg.canonicalize(u + w, rel)
                col[cw] = col.get(cw, 0.0) + c
            cols.append((u, col))
            for w in col:
                if w not in idx and w not in extra:
                    extra[w] = len(extra)
    E_in = np.zeros((m, len(cols)))
    E_out = np.zeros((len(extra), len(cols)))
    for k, (_, col) in enumerate(cols):
        for w, c in col.items():
            if w in idx:
                E_in[idx[w], k] += c
            else:
                E_out[extra[w], k] += c
    first = np.array([len(u) == 0 for u, _ in cols])
    ok0 = first & (np.abs(E_out).sum(axis=0) == 0)
    K0 = _orth(E_in[:, ok0])
    if E_out.shape[0]:
        _, sv, Vt = np.linalg.svd(E_out, full_matrices=True)
        rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0] if sv.size else 1.0)))
        comb = Vt[rank:].T
    else:
        comb = np.eye(len(cols))
    Kall = _orth(E_in @ comb)
    K1 = _orth(Kall - K0 @ (K0.T @ Kall)) if K0.size else Kall
    return K0, K1


def _block_dense(problem: SdpProblem, b: int) -> np.ndarray:
    m, P = problem.blocks[b]
    return np.asarray(P.toarray()).reshape(m, m, problem.n + 1)


def _projected(F: np.ndarray, K: np.ndarray, L: np.ndarray) -> np.ndarray:
    """``K^T F_c L`` for every coefficient matrix ``F_c`` (last axis)."""
    return np.einsum("ia,ijc,jb->abc", K, F, L, optimize=True)


def is_exposed(problem: SdpProblem, block: int, K: np.ndarray,
               options: Optional[SolveOptions] = None, tol: float = 1e-7) -> bool:
    """Whether some ``K S K^T`` with ``S`` positive definite exposes ``span K``.

    Exposed means ``<K S K^T, F(y)>`` vanishes identically on the affine set
    ``A_eq y = b_eq``; since ``F(y)`` is PSD on the feasible set, every
    feasible ``F(y)`` then annihilates ``span K``.
    """
    r = K.shape[1]
    if r == 0:
        return True
    el = _eliminate(problem.A_eq, problem.b_eq, problem.n)
    if el.inconsistent is not None:
        return True  # empty feasible set: anything is exposed
    H = _projected(_block_dense(problem, block), K, K)  # (r, r, n+1)
    Hy0 = H[:, :, 0] + H[:, :, 1:] @ el.y0
    Hfree = (H[:, :, 1:].reshape(r * r, -1) @ el.N).reshape(r, r, -1)
    rows = np.concatenate([Hy0.reshape(r * r, 1), Hfree.reshape(r * r, -1)], axis=1).T
    iu = np.triu_indices(r)
    sym = rows.reshape(-1, r, r)
    sym = sym + np.transpose(sym, (0, 2, 1)) - np.einsum("kii->ki", sym)[:, :, None] * np.eye(r)
    L = sym[:, iu[0], iu[1]]  # coefficients on the upper-triangular entries of S
    scale = max(1.0, np.abs(L).max()) if L.size else 1.0
    # S = identity is the common case (equal-weight sums of squares)
    s_id = (iu[0] == iu[1]).astype(float)
    if L.size == 0 or np.abs(L @ s_id).max() <= 1e-10 * scale:
        return True
    _, sv, Vt = np.linalg.svd(L, full_matrices=False)
    rank = int(np.sum(sv > 1e-10 * scale))
    R = Vt[:rank]
    k = iu[0].size
    b = SdpBuilder(k + 1)
    blk = b.add_block(r)
    for v, (i, j) in enumerate(zip(*iu)):
        b.add_entry(blk, v, i, j, 1.0)
    for i in range(r):
        b.add_entry(blk, k, i, i, -1.0)
    for row in R:
        b.add_equality({v: a for v, a in enumerate(row) if a != 0.0}, 0.0)
    b.add_equality({v: 1.0 for v in range(k) if iu[0][v] == iu[1][v]}, float(r))
    b.add_inequality({k: -1.0}, 1.0)
    b.set_objective({k: 1.0})
    opts = options or SolveOptions()
    sol = solve(b.build(), SolveOptions(max_iter=opts.max_iter))
    if sol.status is SdpStatus.PRIMAL_INFEASIBLE:
        return False
    return bool(sol.y is not None and sol.primal_objective > tol)


def restrict_to_complement(problem: SdpProblem, block: int, N: np.ndarray) -> SdpProblem:
    """Replace block ``F`` by ``V^T F V`` and add ``F(y) N = 0`` (``V`` spans N-perp)."""
    m, _ = problem.blocks[block]
    F = _block_dense(problem, block)
    Q, _ = np.linalg.qr(np.concatenate([N, np.eye(m)], axis=1))
    V = Q[:, N.shape[1]:m]
    red = _projected(F, V, V)  # (k, k, n+1)
    k = V.shape[1]
    newP = sp.csc_matrix(red.reshape(k * k, -1))
    newP.data[np.abs(newP.data) < 1e-15] = 0.0
    newP.eliminate_zeros()
    FN = np.einsum("ijc,ja->iac", F, N).reshape(m * N.shape[1], -1)
    # entries (i, a) with i in span N are redundant with the symmetric ones
    FN[np.abs(FN) < 1e-14] = 0.0
    keep = np.abs(FN).max(axis=1) > 0
    FN = FN[keep]
    _, sv, Vt = np.linalg.svd(FN, full_matrices=False)
    rank = int(np.sum(sv > 1e-11 * max(1.0, sv[0] if sv.size else 1.0)))
    rows = (sv[:rank, None] * Vt[:rank])  # same row space, orthogonal rows
    A_new = sp.csr_matrix(rows[:, 1:])
    b_new = -rows[:, 0]
    blocks = list(problem.blocks)
    blocks[block] = (k, newP)
    return SdpProblem(problem.n, blocks, problem.c, problem.c0, problem.lp,
                      sp.vstack([problem.A_eq, A_new]).tocsr(),
                      np.concatenate([problem.b_eq, b_new]))


class FaceRestriction:
    """Result of :func:`reduce_with_nulls`."""

    def __init__(self, problem: SdpProblem, null_basis: np.ndarray, rounds: int):
        self.problem = problem
        self.null_basis = null_basis
        self.rounds = rounds

    @property
    def dimension(self) -> int:
        return self.null_basis.shape[1]


def reduce_with_nulls(problem: SdpProblem, block: int, ms: MomentStructure,
                      polys: Sequence[Poly], options: Optional[SolveOptions] = None,
                      max_rounds: int = 4) -> FaceRestriction:
    """Restrict ``problem`` to the face exposed by candidate null vectors.

    Candidates come from :func:`candidate_nulls`.  Each round tries the
    remaining candidates as a whole and then only the first-generation
    ones; accepted directions yield the equalities ``F(y) N = 0``, which can
    expose further directions in the next round.
    """
    K0, K1 = candidate_nulls(ms, polys)
    m = ms.size
    accepted = np.zeros((m, 0))
    cur = problem
    rounds = 0
    for _ in range(max_rounds):
        remaining = []
        for K in (np.concatenate([K0, K1], axis=1), K0):
            Kr = K - accepted @ (accepted.T @ K) if accepted.size else K
            remaining.append(_orth(Kr))
        progress = False
        for Kr in remaining:
            if Kr.shape[1] == 0:
                continue
            probe = SdpProblem(problem.n, problem.blocks, problem.c, problem.c0, problem.lp,
                               cur.A_eq, cur.b_eq)
            if is_exposed(probe, block, Kr, options):
                accepted = _orth(np.concatenate([accepted, Kr], axis=1))
                cur = restrict_to_complement(problem, block, accepted)
                progress = True
                rounds += 1
                break
        if not progress:
            break
    return FaceRestriction(cur if accepted.size else problem, accepted, rounds)
