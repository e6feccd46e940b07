"""Dense primal-dual interior-point solver for linear matrix inequalities.

Problems have the form::

    maximize    c . y + c0
    subject to  F_b(y) = F_b0 + sum_i y_i F_bi  is PSD   for every block b
                g + G y >= 0                             (elementwise)
                A y = b

Equality constraints are eliminated first (``y = y0 + N t``), leaving a
pure LMI in the free parameters ``t``.  That problem is solved with an
infeasible-start path-following method using the HKM search direction and
Mehrotra's predictor-corrector rule.  The dual variables (one PSD matrix per
block, a nonnegative vector for the linear inequalities and free multipliers
for the equalities) certify an upper bound that :func:`verify_certificate`
recomputes independently on the original, non-eliminated data.
"""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import TooLargeError

log = logging.getLogger(__name__)


class SdpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"  # no y satisfies the constraints
    DUAL_INFEASIBLE = "dual_infeasible"      # objective unbounded above
    NUMERICAL_TROUBLE = "numerical_trouble"


@dataclass
class SolveOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-9
    max_iter: int = 200
    inf_threshold: float = 1e8
    max_dim: int = 600
    step_fraction: float = 0.95
    refine: int = 0
    var_bound: Optional[float] = None  # known bound on |y_i|, sharpens best-iterate choice
    verbose: bool = False


# ----------------------------------------------------------------------------
# Problem data
# ----------------------------------------------------------------------------

@dataclass
class SdpProblem:
    """LMI problem in the form described in the module docstring.

    Attributes
    ----------
    n : int
        Number of variables.
    blocks : list of (int, scipy.sparse.csc_matrix)
        For each PSD block its size ``m`` and an ``(m*m, n+1)`` matrix whose
        column 0 is ``vec(F_b0)`` and column ``i+1`` is ``vec(F_bi)``
        (row-major, both triangles stored).
    lp : scipy.sparse.csc_matrix or None
        ``(p, n+1)`` matrix ``[g | G]`` of linear inequalities.
    A_eq, b_eq : equality constraints.
    c, c0 : objective.
    """

    n: int
    blocks: List[Tuple[int, sp.csc_matrix]]
    c: np.ndarray
    c0: float = 0.0
    lp: Optional[sp.csc_matrix] = None
    A_eq: Optional[sp.csr_matrix] = None
    b_eq: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(self.n)
        if not self.blocks and self.lp is None:
            raise ValueError("problem needs at least one constraint block")
        for m, P in self.blocks:
            if P.shape != (m * m, self.n + 1):
                raise ValueError("block coefficient matrix has the wrong shape")
        if self.A_eq is None:
            self.A_eq = sp.csr_matrix((0, self.n))
            self.b_eq = np.zeros(0)
        self.A_eq = sp.csr_matrix(self.A_eq)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(self.A_eq.shape[0])
        if not np.all(np.isfinite(self.A_eq.data)) or not np.all(np.isfinite(self.b_eq)):
            raise ValueError("non-finite equality constraint")

    @property
    def max_block(self) -> int:
        return max([m for m, _ in self.blocks] + [1])

    def block_matrix(self, b: int, y: np.ndarray) -> np.ndarray:
        m, P = self.blocks[b]
        return (P @ np.concatenate([[1.0], y])).reshape(m, m)

    def lp_values(self, y: np.ndarray) -> np.ndarray:
        if self.lp is None:
            return np.zeros(0)
        return self.lp @ np.concatenate([[1.0], y])

    def objective(self, y) -> float:
        return float(self.c @ y + self.c0)

    def scaled(self, kappa: float) -> "SdpProblem":
        return SdpProblem(self.n, self.blocks, kappa * self.c, kappa * self.c0,
                          self.lp, self.A_eq, self.b_eq)

    def with_objective(self, c, c0=0.0) -> "SdpProblem":
        return SdpProblem(self.n, self.blocks, c, c0, self.lp, self.A_eq, self.b_eq)


class SdpBuilder:
    """Incremental construction of an :class:`SdpProblem`."""

    def __init__(self, n: int):
        self.n = n
        self._blocks = []  # (m, rows, cols, vals)
        self._lp = []      # (row, col, val)
        self._lp_rows = 0
        self._eq = []
        self._eq_rhs = []
        self.c = np.zeros(n)
        self.c0 = 0.0

    def add_variables(self, k: int) -> int:
        """Append k variables; returns the index of the first one."""
        first = self.n
        self.n += k
        self.c = np.concatenate([self.c, np.zeros(k)])
        return first

    def add_block(self, m: int) -> int:
        self._blocks.append((m, [], [], []))
        return len(self._blocks) - 1

    def add_entry(self, block: int, var: Optional[int], i: int, j: int, val: float):
        """Add ``val`` to entries (i, j) and (j, i) of F_var (None = constant)."""
        m, r, cidx, v = self._blocks[block]
        col = 0 if var is None else var + 1
        r.append(i * m + j)
        cidx.append(col)
        v.append(val)
        if i != j:
            r.append(j * m + i)
            cidx.append(col)
            v.append(val)

    def add_template_block(self, template: np.ndarray, offset: int = -1,
                           constant_id: int = 0):
        """Block whose entry (i, j) is variable ``template[i, j] + offset``.

        Entries equal to ``constant_id`` are the constant 1.
        """
        T = np.asarray(template)
        m = T.shape[0]
        b = self.add_block(m)
        _, r, cidx, v = self._blocks[b]
        flat = T.ravel()
        cols = np.where(flat == constant_id, 0, flat + offset + 1)
        r.extend(range(m * m))
        cidx.extend(cols.tolist())
        v.extend([1.0] * (m * m))
        return b

    def add_inequality(self, coefs: dict, const: float = 0.0):
        """Add ``const + sum coefs[var] * y_var >= 0``."""
        row = self._lp_rows
        self._lp_rows += 1
        if const:
            self._lp.append((row, 0, const))
        for var, a in coefs.items():
            self._lp.append((row, var + 1, a))

    def add_equality(self, coefs: dict, rhs: float):
        self._eq.append(dict(coefs))
        self._eq_rhs.append(rhs)

    def set_objective(self, coefs: dict, const: float = 0.0):
        self.c = np.zeros(self.n)
        for var, a in coefs.items():
            self.c[var] += a
        self.c0 = const

    def build(self) -> SdpProblem:
        blocks = []
        for m, r, cidx, v in self._blocks:
            P = sp.csc_matrix((v, (r, cidx)), shape=(m * m, self.n + 1))
            P.sum_duplicates()
            blocks.append((m, P))
        lp = None
        if self._lp_rows:
            rr, cc, vv = zip(*self._lp) if self._lp else ((), (), ())
            lp = sp.csc_matrix((vv, (rr, cc)), shape=(self._lp_rows, self.n + 1))
        rows, cols, vals = [], [], []
        for k, d in enumerate(self._eq):
            for var, a in d.items():
                rows.append(k)
                cols.append(var)
                vals.append(a)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self._eq), self.n))
        return SdpProblem(self.n, blocks, self.c, self.c0, lp, A, np.array(self._eq_rhs))


# ----------------------------------------------------------------------------
# Results
# ----------------------------------------------------------------------------

@dataclass
class SdpSolution:
    status: SdpStatus
    primal_objective: float
    dual_objective: float
    y: np.ndarray
    dual_blocks: List[np.ndarray]
    dual_lp: np.ndarray
    multipliers: np.ndarray
    gap: float
    iterations: int
    history: List[dict] = field(default_factory=list, repr=False)
    farkas: Optional[dict] = field(default=None, repr=False)
    message: str = ""

    @property
    def value(self) -> float:
        return self.dual_objective


# ----------------------------------------------------------------------------
# Elimination of equality constraints
# ----------------------------------------------------------------------------

@dataclass
class _Elimination:
    y0: np.ndarray
    N: sp.csc_matrix  # n x q
    free: np.ndarray
    inconsistent: Optional[np.ndarray] = None  # row combination proving infeasibility


def _eliminate(A: sp.csr_matrix, b: np.ndarray, n: int, tol: float = 1e-11) -> _Elimination:
    """Gauss-Jordan reduction of ``A y = b`` with sparsity-aware pivoting."""
    r = A.shape[0]
    if r == 0:
        return _Elimination(np.zeros(n), sp.identity(n, format="csc"), np.arange(n))
    R = A.toarray().astype(float)
    rhs = b.astype(float).copy()
    T = np.eye(r)  # row operations applied so far, for certificates
    scale = max(1.0, np.abs(R).max())
    pivots = []
    used_rows = []
    for i in range(r):
        row = R[i]
        amax = np.abs(row).max() if row.size else 0.0
        if amax <= tol * scale:
            if abs(rhs[i]) > 1e-9 * max(1.0, np.abs(b).max()):
                w = T[i].copy()
                return _Elimination(np.zeros(n), sp.identity(n, format="csc"), np.arange(n), w)
            continue
        cand = np.flatnonzero(np.abs(row) >= 0.3 * amax)
        counts = (np.abs(R[:, cand]) > tol * scale).sum(axis=0)
        j = cand[np.lexsort((cand, -np.abs(row[cand]), counts))[0]]
        piv = row[j]
        R[i] /= piv
        rhs[i] /= piv
        T[i] /= piv
        col = R[:, j].copy()
        col[i] = 0.0
        nz = np.flatnonzero(np.abs(col) > 0)
        if nz.size:
            R[nz] -= np.outer(col[nz], R[i])
            rhs[nz] -= col[nz] * rhs[i]
            T[nz] -= np.outer(col[nz], T[i])
        R[:, j] = 0.0
        R[i, j] = 1.0
        pivots.append(j)
        used_rows.append(i)
    pivots = np.array(pivots, dtype=int)
    free = np.setdiff1d(np.arange(n), pivots)
    y0 = np.zeros(n)
    y0[pivots] = rhs[used_rows]
    pos = {v: k for k, v in enumerate(free)}
    rows, cols, vals = [], [], []
    for v in free:
        rows.append(v)
        cols.append(pos[v])
        vals.append(1.0)
    sub = R[np.ix_(used_rows, free)]
    pr, fc = np.nonzero(np.abs(sub) > 0)
    for a, f in zip(pr, fc):
        rows.append(pivots[a])
        cols.append(f)
        vals.append(-sub[a, f])
    N = sp.csc_matrix((vals, (rows, cols)), shape=(n, free.size))
    return _Elimination(y0, N, free)


# ----------------------------------------------------------------------------
# Interior-point core
# ----------------------------------------------------------------------------

class _Block:
    """One PSD block of the reduced problem ``Z = C - sum_j t_j A_j``."""

    def __init__(self, m: int, C: np.ndarray, P: sp.csc_matrix):
        self.m = m
        self.C = C.reshape(m, m)
        self.C = (self.C + self.C.T) / 2
        P = sp.csc_matrix(P)
        self.P = P  # (m*m, q) columns vec(A_j)
        self.PT = sp.csr_matrix(P.T)
        # W[a, j*m + b] = A_j[a, b]: all A_j side by side, for X @ A_j in one product
        coo = P.tocoo()
        a, bb = np.divmod(coo.row, m)
        self.W = sp.csc_matrix((coo.data, (a, coo.col * m + bb)), shape=(m, m * P.shape[1]))

    def opA(self, G: np.ndarray) -> np.ndarray:
        """<A_j, G> for all j."""
        return self.PT @ G.ravel()

    def opAt(self, t: np.ndarray) -> np.ndarray:
        return (self.P @ t).reshape(self.m, self.m)

    def schur(self, X: np.ndarray, Zi: np.ndarray) -> np.ndarray:
        """M_ij = <A_i, X A_j Zi>, built from chunks of columns j."""
        m = self.m
        q = self.P.shape[1]
        M = np.empty((q, q))
        chunk = max(1, int(2e7 // (m * m)))
        for s in range(0, q, chunk):
            e = min(q, s + chunk)
            k = e - s
            XW = np.asarray((self.W[:, s * m:e * m].T @ X).T)  # X symmetric
            XW = XW.reshape(m, k, m).transpose(1, 0, 2).reshape(k * m, m)
            G = (XW @ Zi).reshape(k, m * m)
            M[:, s:e] = self.PT @ np.ascontiguousarray(G.T)
        return (M + M.T) / 2


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    W = sla.solve_triangular(L, dX, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh((W + W.T) / 2).min()
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_vec(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _inv_sym(Z: np.ndarray) -> np.ndarray:
    c = sla.cho_factor(Z, lower=True)
    Zi = sla.cho_solve(c, np.eye(Z.shape[0]))
    return (Zi + Zi.T) / 2


def _ipm(blocks: List[_Block], lp_c: np.ndarray, lp_A: sp.csr_matrix, b: np.ndarray,
         opts: SolveOptions, const: float):
    """Solve max b.t s.t. C_k - A_k* t >= 0 (PSD / elementwise).

    Returns (status, t, Xs, xlp, history, farkas_flag).
    """
    q = b.size
    p = lp_c.size
    lpAT = sp.csr_matrix(lp_A.T) if p else None
    normC = np.sqrt(sum(np.sum(B.C ** 2) for B in blocks) + np.sum(lp_c ** 2))
    normb = np.linalg.norm(b)
    # starting point
    Xs, Zs = [], []
    for B in blocks:
        colnorm = np.sqrt(np.asarray(B.P.multiply(B.P).sum(axis=0))).ravel()
        xi = max(10.0, np.sqrt(B.m), B.m * np.max((1 + np.abs(b)) / (1 + colnorm)) if q else 10.0)
        zeta = max(10.0, np.sqrt(B.m), colnorm.max() if q else 0.0, np.linalg.norm(B.C))
        Xs.append(xi * np.eye(B.m))
        Zs.append(zeta * np.eye(B.m))
    if p:
        colnorm = np.sqrt(np.asarray(lp_A.multiply(lp_A).sum(axis=0))).ravel()
        xlp = np.full(p, max(10.0, np.max((1 + np.abs(b)) / (1 + colnorm)) if q else 10.0))
        zlp = np.full(p, max(10.0, colnorm.max() if q else 0.0, np.abs(lp_c).max()))
    else:
        xlp = zlp = np.zeros(0)
    t = np.zeros(q)
    N_total = sum(B.m for B in blocks) + p
    history = []

    def opA(Gs, glp):
        r = np.zeros(q)
        for B, G in zip(blocks, Gs):
            r += B.opA(G)
        if p:
            r += lpAT @ glp
        return r

    def opAt(v):
        return [B.opAt(v) for B in blocks], (lp_A @ v if p else np.zeros(0))

    status = SdpStatus.NUMERICAL_TROUBLE
    best = None
    best_primal = None
    last_pinf = np.inf
    message = "maximum iterations reached"
    for it in range(opts.max_iter + 1):
        AtT, atl = opAt(t)
        Rd = [B.C - Z - At for B, Z, At in zip(blocks, Zs, AtT)]
        rd_lp = lp_c - zlp - atl
        Rp = b - opA(Xs, xlp)
        pobj = float(b @ t) + const
        dobj = float(sum(np.sum(B.C * X) for B, X in zip(blocks, Xs)) + lp_c @ xlp) + const
        mu = (sum(np.sum(X * Z) for X, Z in zip(Xs, Zs)) + xlp @ zlp) / N_total
        pinf = np.sqrt(sum(np.sum(R ** 2) for R in Rd) + np.sum(rd_lp ** 2)) / (1 + normC)
        dinf = np.linalg.norm(Rp) / (1 + normb)
        gap = abs(dobj - pobj)
        slack = abs(t @ Rp) + abs(sum(np.sum(R * X) for R, X in zip(Rd, Xs)) + rd_lp @ xlp)
        history.append(dict(iteration=it, primal=pobj, dual=dobj, pinf=pinf, dinf=dinf,
                            mu=mu, infeasibility_slack=slack))
        if opts.verbose:
            print(f"{it:3d} p={pobj:+.10e} d={dobj:+.10e} pinf={pinf:.1e} dinf={dinf:.1e} mu={mu:.1e}")
        rel_gap = gap / (1 + abs(pobj))
        score = max(rel_gap / opts.gap_tol, pinf / opts.feas_tol, dinf / opts.feas_tol)
        if opts.var_bound is not None:
            # rigorous bound of this dual iterate when |t_j| <= var_bound
            score = dobj + opts.var_bound * np.abs(Rp).sum()
        if best is None or score < best[0]:
            best = (score, t.copy(), [X.copy() for X in Xs], xlp.copy(), pobj, dobj)
        # primal fallback: best objective among nearly feasible iterates,
        # otherwise the least infeasible one
        key = (0, -pobj) if pinf <= 10 * opts.feas_tol else (1, pinf)
        if best_primal is None or key < best_primal[0]:
            best_primal = (key, t.copy(), pinf)
        last_pinf = pinf
        if rel_gap <= opts.gap_tol and pinf <= opts.feas_tol and dinf <= opts.feas_tol:
            status, message = SdpStatus.OPTIMAL, "converged"
            break
        # infeasibility detection
        cx = dobj - const
        if -cx > opts.inf_threshold:
            status, message = SdpStatus.PRIMAL_INFEASIBLE, "Farkas ray detected"
            break
        bt = pobj - const
        if bt > opts.inf_threshold and pinf < 1e-6 * max(1.0, bt):
            status, message = SdpStatus.DUAL_INFEASIBLE, "improving ray detected"
            break
        if it == opts.max_iter:
            break
        try:
            Zi = [_inv_sym(Z) for Z in Zs]
        except np.linalg.LinAlgError:
            message = "dual slack lost definiteness"
            break
        M = np.zeros((q, q))
        for B, X, Zinv in zip(blocks, Xs, Zi):
            M += B.schur(X, Zinv)
        if p:
            M += (lp_A.T @ sp.diags(xlp / zlp) @ lp_A).toarray()
        M = (M + M.T) / 2
        try:
            cf = sla.cho_factor(M, lower=True)
            solveM = lambda r: sla.cho_solve(cf, r)
        except np.linalg.LinAlgError:
            reg = 1e-14 * max(1.0, np.abs(np.diag(M)).max())
            try:
                cf = sla.cho_factor(M + reg * np.eye(q), lower=True)
                solveM = lambda r: sla.cho_solve(cf, r)
            except np.linalg.LinAlgError:
                lu = sla.lu_factor(M)
                solveM = lambda r: sla.lu_solve(lu, r)

        def direction(Rc, rc_lp):
            # M dt = Rp - A(Rc Zi) + A(X Rd Zi)
            G = [Rc_b @ Zinv - X @ R @ Zinv for Rc_b, Zinv, X, R in zip(Rc, Zi, Xs, Rd)]
            glp = (rc_lp - xlp * rd_lp) / zlp if p else np.zeros(0)
            rhs = Rp - opA(G, glp)
            dt = solveM(rhs)
            for _ in range(opts.refine + 1):
                dAt, datl = opAt(dt)
                dZ = [R - D for R, D in zip(Rd, dAt)]
                dX = [(Rc_b - X @ D) @ Zinv for Rc_b, X, D, Zinv in zip(Rc, Xs, dZ, Zi)]
                dX = [(D + D.T) / 2 for D in dX]
                dzl = rd_lp - datl
                dxl = (rc_lp - xlp * dzl) / zlp if p else np.zeros(0)
                # iterative refinement against the primal equations A(dX) = Rp
                err = Rp - opA(dX, dxl)
                if not np.all(np.isfinite(err)) or np.linalg.norm(err) <= 1e-15 * (1 + normb):
                    break
                dt = dt + solveM(err)
            return dt, dX, dZ, dxl, dzl

        def steps(dX, dZ, dxl, dzl):
            ap = min([_max_step(X, D) for X, D in zip(Xs, dX)] + [_max_step_vec(xlp, dxl)])
            ad = min([_max_step(Z, D) for Z, D in zip(Zs, dZ)] + [_max_step_vec(zlp, dzl)])
            return ap, ad

        # predictor
        Rc = [-X @ Z for X, Z in zip(Xs, Zs)]
        rc_lp = -xlp * zlp
        dt, dX, dZ, dxl, dzl = direction(Rc, rc_lp)
        ap, ad = steps(dX, dZ, dxl, dzl)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (sum(np.sum((X + ap * DX) * (Z + ad * DZ))
                      for X, DX, Z, DZ in zip(Xs, dX, Zs, dZ))
                  + (xlp + ap * dxl) @ (zlp + ad * dzl)) / N_total
        sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** 3) if mu > 0 else 0.0
        # corrector
        Rc = [sigma * mu * np.eye(X.shape[0]) - X @ Z - DX @ DZ
              for X, Z, DX, DZ in zip(Xs, Zs, dX, dZ)]
        rc_lp = sigma * mu - xlp * zlp - dxl * dzl
        dt, dX, dZ, dxl, dzl = direction(Rc, rc_lp)
        ap, ad = steps(dX, dZ, dxl, dzl)
        tau = opts.step_fraction
        ap, ad = min(1.0, tau * ap), min(1.0, tau * ad)
        if opts.verbose:
            nx = max(np.abs(X).max() for X in Xs) if Xs else 0.0
            print(f"    sigma={sigma:.2e} ap={ap:.3e} ad={ad:.3e} |X|={nx:.2e}")
        if max(ap, ad) < 1e-12:
            message = "step length collapsed"
            break
        Xs = [X + ap * D for X, D in zip(Xs, dX)]
        xlp = xlp + ap * dxl
        t = t + ad * dt
        Zs = [Z + ad * D for Z, D in zip(Zs, dZ)]
        zlp = zlp + ad * dzl
        Xs = [(X + X.T) / 2 for X in Xs]
        Zs = [(Z + Z.T) / 2 for Z in Zs]
    if status is SdpStatus.NUMERICAL_TROUBLE and best is not None:
        _, _, Xs, xlp, _, _ = best
        if last_pinf > 100 * max(best_primal[2], opts.feas_tol):
            t = best_primal[1]
    return status, t, Xs, xlp, history, message


# ----------------------------------------------------------------------------
# Public driver
# ----------------------------------------------------------------------------

def _dual_functional(problem: SdpProblem, Xs, xlp) -> np.ndarray:
    """F*(X)_i = sum_b <F_bi, X_b> + sum_r G_ri x_r for i = 0..n (0 = constant)."""
    out = np.zeros(problem.n + 1)
    for (m, P), X in zip(problem.blocks, Xs):
        out += P.T @ X.ravel()
    if problem.lp is not None and xlp.size:
        out += problem.lp.T @ xlp
    return out


def _multipliers(problem: SdpProblem, Xs, xlp) -> np.ndarray:
    """Least-squares w with A^T w = c + F*(X)."""
    if problem.A_eq.shape[0] == 0:
        return np.zeros(0)
    target = problem.c + _dual_functional(problem, Xs, xlp)[1:]
    w, *_ = np.linalg.lstsq(problem.A_eq.toarray().T, target, rcond=None)
    return w


def _check_size(problem: SdpProblem, opts: SolveOptions):
    if problem.max_block > opts.max_dim:
        raise TooLargeError(f"block dimension {problem.max_block} exceeds cap {opts.max_dim}")


def solve(problem: SdpProblem, options: Optional[SolveOptions] = None) -> SdpSolution:
    """Maximize the objective of ``problem``; see :class:`SdpSolution`."""
    opts = options or SolveOptions()
    _check_size(problem, opts)
    n = problem.n
    el = _eliminate(problem.A_eq, problem.b_eq, n)
    if el.inconsistent is not None:
        w = el.inconsistent
        w = -w / (w @ problem.b_eq)
        return SdpSolution(SdpStatus.PRIMAL_INFEASIBLE, -np.inf, -np.inf, np.full(n, np.nan),
                           [np.zeros((m, m)) for m, _ in problem.blocks],
                           np.zeros(0 if problem.lp is None else problem.lp.shape[0]), w,
                           np.nan, 0, farkas=dict(blocks=[np.zeros((m, m)) for m, _ in problem.blocks],
                                                 lp=np.zeros(0 if problem.lp is None else problem.lp.shape[0]),
                                                 w=w), message="inconsistent equalities")
    N, y0 = el.N, el.y0
    q = N.shape[1]
    ext0 = np.concatenate([[1.0], y0])
    blocks = []
    for m, P in problem.blocks:
        C = P @ ext0
        Pred = -(P[:, 1:] @ N)
        blocks.append(_Block(m, C, Pred))
    if problem.lp is not None:
        lp_c = problem.lp @ ext0
        lp_A = sp.csr_matrix(-(problem.lp[:, 1:] @ N))
    else:
        lp_c = np.zeros(0)
        lp_A = sp.csr_matrix((0, q))
    b = N.T @ problem.c
    const = problem.c0 + float(problem.c @ y0)
    # parameters that appear nowhere
    used = np.zeros(q, dtype=bool)
    for B in blocks:
        used |= np.diff(sp.csc_matrix(B.P).indptr) > 0
    if lp_A.shape[0]:
        used |= np.diff(sp.csc_matrix(lp_A).indptr) > 0
    if np.any(~used & (np.abs(b) > 0)):
        return SdpSolution(SdpStatus.DUAL_INFEASIBLE, np.inf, np.inf, y0.copy(),
                           [np.zeros((m, m)) for m, _ in problem.blocks], np.zeros(lp_c.size),
                           np.zeros(problem.A_eq.shape[0]), np.nan, 0,
                           message="objective depends on an unconstrained parameter")
    keep = np.flatnonzero(used)
    for B in blocks:
        B.__init__(B.m, B.C.ravel(), B.P[:, keep])
    lp_A = sp.csr_matrix(lp_A[:, keep])
    status, tk, Xs, xlp, hist, msg = _ipm(blocks, lp_c, lp_A, b[keep], opts, const)
    t = np.zeros(q)
    t[keep] = tk
    y = y0 + N @ t
    w = _multipliers(problem, Xs, xlp)
    pobj = problem.objective(y)
    dobj = certificate_bound(problem, Xs, xlp, w)
    sol = SdpSolution(status, pobj, dobj, y, Xs, xlp, w, abs(dobj - pobj), len(hist) - 1,
                      hist, message=msg)
    if status is SdpStatus.PRIMAL_INFEASIBLE:
        scale = -(dobj - problem.c0) if dobj - problem.c0 < 0 else 1.0
        Xn = [X / scale for X in Xs]
        xn = xlp / scale
        sol.farkas = dict(blocks=Xn, lp=xn, w=_ray_multipliers(problem, Xn, xn))
        sol.primal_objective = sol.dual_objective = -np.inf
    elif status is SdpStatus.DUAL_INFEASIBLE:
        sol.primal_objective = sol.dual_objective = np.inf
    return sol


def _ray_multipliers(problem: SdpProblem, Xs, xlp) -> np.ndarray:
    if problem.A_eq.shape[0] == 0:
        return np.zeros(0)
    target = _dual_functional(problem, Xs, xlp)[1:]
    w, *_ = np.linalg.lstsq(problem.A_eq.toarray().T, target, rcond=None)
    return w


def certificate_bound(problem: SdpProblem, Xs, xlp, w) -> float:
    """Upper bound c0 + <F0, X> + g.x + b.w implied by dual variables."""
    F = _dual_functional(problem, Xs, xlp)
    return float(problem.c0 + F[0] + (problem.b_eq @ w if w.size else 0.0))


@dataclass
class CertificateReport:
    bound: float
    min_eig: float
    min_lp: float
    residual: float
    rigorous_bound: float
    valid: bool


def verify_certificate(problem: SdpProblem, dual_blocks: Sequence[np.ndarray],
                       dual_lp: np.ndarray, multipliers: np.ndarray,
                       y_bound: float = 1.0, tol: float = 1e-7) -> CertificateReport:
    """Recompute the upper bound implied by a dual solution.

    This uses the original constraint data only.  ``residual`` is the
    largest violation of dual feasibility ``c + F*(X) - A^T w = 0``; with
    ``|y_i| <= y_bound`` on the feasible set (moment variables are bounded
    by 1) the bound is inflated by ``y_bound * sum |residual|`` and by the
    negative part of the PSD spectrum times an estimate of the trace.
    """
    Xs = [np.asarray((X + X.T) / 2, dtype=float) for X in dual_blocks]
    xlp = np.asarray(dual_lp, dtype=float)
    w = np.asarray(multipliers, dtype=float)
    Fstar = np.zeros(problem.n + 1)
    for (m, P), X in zip(problem.blocks, Xs):
        Fstar += np.asarray(P.T @ X.reshape(-1)).ravel()
    if problem.lp is not None and xlp.size:
        Fstar += np.asarray(problem.lp.T @ xlp).ravel()
    Aw = problem.A_eq.T @ w if w.size else np.zeros(problem.n)
    resid = problem.c + Fstar[1:] - Aw
    bound = problem.c0 + Fstar[0] + (float(np.dot(problem.b_eq, w)) if w.size else 0.0)
    eigs = [np.linalg.eigvalsh(X).min() for X in Xs] or [0.0]
    mineig = float(min(eigs))
    minlp = float(xlp.min()) if xlp.size else 0.0
    # penalty: moment matrices have diagonal entries bounded by 1 in our use
    penalty = y_bound * np.abs(resid).sum()
    for (m, _), e in zip(problem.blocks, eigs):
        if e < 0:
            penalty += -e * m * max(1.0, y_bound)
    rig = bound + penalty
    valid = mineig >= -tol and minlp >= -tol and np.abs(resid).max() <= tol * (1 + np.abs(problem.c).max())
    return CertificateReport(float(bound), mineig, minlp, float(np.abs(resid).max()), float(rig), bool(valid))


def verify_farkas(problem: SdpProblem, farkas: dict, tol: float = 1e-7) -> bool:
    """Check a certificate that no y satisfies the constraints.

    Requires X PSD, x >= 0, F*(X) - A^T w = 0 on every variable, and the
    constant term <F0, X> + g.x + b.w strictly negative.
    """
    Xs = farkas["blocks"]
    xlp = farkas["lp"]
    w = farkas["w"]
    Fstar = np.zeros(problem.n + 1)
    for (m, P), X in zip(problem.blocks, Xs):
        Fstar += np.asarray(P.T @ np.asarray(X).reshape(-1)).ravel()
    if problem.lp is not None and len(xlp):
        Fstar += np.asarray(problem.lp.T @ xlp).ravel()
    Aw = problem.A_eq.T @ w if len(w) else np.zeros(problem.n)
    resid = Fstar[1:] - Aw
    const = Fstar[0] + (float(problem.b_eq @ w) if len(w) else 0.0)
    psd = all(np.linalg.eigvalsh((X + X.T) / 2).min() >= -tol for X in Xs)
    nonneg = (len(xlp) == 0) or np.min(xlp) >= -tol
    scale = max(1.0, sum(np.abs(X).sum() for X in Xs))
    return bool(psd and nonneg and const < -tol and np.abs(resid).max() <= 1e-6 * scale)


def _max_slack_problem(problem: SdpProblem, lp_slack: bool) -> SdpProblem:
    """Auxiliary problem max s with F_b(y) - s I PSD and s <= 1."""
    n = problem.n
    blocks = []
    for m, P in problem.blocks:
        eye = sp.csc_matrix((-np.ones(m), (np.arange(m) * (m + 1), np.zeros(m, dtype=int))),
                            shape=(m * m, 1))
        blocks.append((m, sp.hstack([P, eye], format="csc")))
    rows = []
    if problem.lp is not None:
        p = problem.lp.shape[0]
        col = -sp.csc_matrix(np.ones((p, 1))) if lp_slack else sp.csc_matrix((p, 1))
        rows.append(sp.hstack([problem.lp, col]))
    rows.append(sp.csc_matrix(([1.0, -1.0], ([0, 0], [0, n + 1])), shape=(1, n + 2)))
    lp = sp.vstack(rows, format="csc")
    A = sp.hstack([problem.A_eq, sp.csr_matrix((problem.A_eq.shape[0], 1))], format="csr")
    c = np.zeros(n + 1)
    c[n] = 1.0
    return SdpProblem(n + 1, blocks, c, 0.0, lp, A, problem.b_eq)


def feasibility(problem: SdpProblem, options: Optional[SolveOptions] = None,
                tol: float = 1e-7) -> SdpSolution:
    """Decide whether the constraints of ``problem`` admit a solution.

    Solves ``max s`` subject to ``F_b(y) - s I`` PSD, ``g + G y - s >= 0``,
    ``s <= 1`` and the equalities, which is always strictly feasible in the
    LMI part.  A negative optimum yields a Farkas certificate.
    """
    opts = options or SolveOptions()
    n = problem.n
    sol = solve(_max_slack_problem(problem, True), opts)
    y = sol.y[:n] if sol.y.size == n + 1 else sol.y
    out = SdpSolution(sol.status, sol.primal_objective, sol.dual_objective, y,
                      sol.dual_blocks, sol.dual_lp, sol.multipliers, sol.gap,
                      sol.iterations, sol.history, sol.farkas, sol.message)
    if sol.status is SdpStatus.PRIMAL_INFEASIBLE:
        # the inconsistent-equalities case
        if sol.farkas is not None:
            out.farkas = dict(blocks=sol.farkas["blocks"],
                              lp=np.zeros(0 if problem.lp is None else problem.lp.shape[0]),
                              w=sol.farkas["w"])
        return out
    if sol.status is not SdpStatus.OPTIMAL and not np.isfinite(sol.dual_objective):
        return out
    if sol.dual_objective >= -tol:
        out.status = SdpStatus.OPTIMAL if sol.status is SdpStatus.OPTIMAL or \
            sol.primal_objective >= -tol else sol.status
        return out
    if sol.primal_objective > -tol:
        return out  # inconclusive
    # dual of the auxiliary problem: trace(X) + x_lp.sum() + x_cap = 1, <C, X> < 0
    scale = -sol.dual_objective
    Xn = [X / scale for X in sol.dual_blocks]
    xlp = sol.dual_lp[:-1] / scale if problem.lp is not None else np.zeros(0)
    farkas = dict(blocks=Xn, lp=xlp, w=_ray_multipliers(problem, Xn, xlp))
    out.status = SdpStatus.PRIMAL_INFEASIBLE
    out.farkas = farkas
    out.message = f"max slack {sol.dual_objective:.3e} < 0"
    return out


# ----------------------------------------------------------------------------
# Text dump
# ----------------------------------------------------------------------------

def dump_problem(problem: SdpProblem) -> str:
    """Plain-text description for cross-checking with external solvers.

    Format (one record per line)::

        nvars N
        objective c0
        c VAR VALUE
        block SIZE
        F VAR I J VALUE        (VAR = -1 for the constant; I <= J)
        lp ROWS
        g ROW VAR VALUE        (VAR = -1 for the constant)
        eq ROWS
        a ROW VAR VALUE
        rhs ROW VALUE
    """
    out = io.StringIO()
    out.write(f"nvars {problem.n}\nobjective {float(problem.c0)!r}\n")
    for i in np.flatnonzero(problem.c):
        out.write(f"c {i} {float(problem.c[i])!r}\n")
    for m, P in problem.blocks:
        out.write(f"block {m}\n")
        C = sp.coo_matrix(P)
        for r, col, v in zip(C.row, C.col, C.data):
            i, j = divmod(int(r), m)
            if i <= j and v != 0:
                out.write(f"F {col - 1} {i} {j} {float(v)!r}\n")
    if problem.lp is not None:
        out.write(f"lp {problem.lp.shape[0]}\n")
        C = sp.coo_matrix(problem.lp)
        for r, col, v in zip(C.row, C.col, C.data):
            out.write(f"g {r} {col - 1} {float(v)!r}\n")
    out.write(f"eq {problem.A_eq.shape[0]}\n")
    C = sp.coo_matrix(problem.A_eq)
    for r, col, v in zip(C.row, C.col, C.data):
        out.write(f"a {r} {col} {float(v)!r}\n")
    for r, v in enumerate(problem.b_eq):
        out.write(f"rhs {r} {float(v)!r}\n")
    return out.getvalue()


def load_problem(text: str) -> SdpProblem:
    n = None
    c0 = 0.0
    cvals = {}
    blocks = []
    lp_rows, lp_n, eq = [], 0, []
    eq_n = 0
    rhs = {}
    for line in text.splitlines():
        tok = line.split()
        if not tok:
            continue
        key = tok[0]
        if key == "nvars":
            n = int(tok[1])
        elif key == "objective":
            c0 = float(tok[1])
        elif key == "c":
            cvals[int(tok[1])] = float(tok[2])
        elif key == "block":
            blocks.append((int(tok[1]), SdpBuilder(0)))
            blocks[-1] = (int(tok[1]), [])
        elif key == "F":
            blocks[-1][1].append((int(tok[1]), int(tok[2]), int(tok[3]), float(tok[4])))
        elif key == "lp":
            lp_n = int(tok[1])
        elif key == "g":
            lp_rows.append((int(tok[1]), int(tok[2]), float(tok[3])))
        elif key == "eq":
            eq_n = int(tok[1])
        elif key == "a":
            eq.append((int(tok[1]), int(tok[2]), float(tok[3])))
        elif key == "rhs":
            rhs[int(tok[1])] = float(tok[2])
    bld = SdpBuilder(n)
    for m, ent in blocks:
        b = bld.add_block(m)
        for var, i, j, v in ent:
            bld.add_entry(b, None if var < 0 else var, i, j, v)
    built = bld.build()
    lp = None
    if lp_n:
        rr = [r for r, _, _ in lp_rows]
        cc = [v + 1 for _, v, _ in lp_rows]
        vv = [x for _, _, x in lp_rows]
        lp = sp.csc_matrix((vv, (rr, cc)), shape=(lp_n, n + 1))
    A = sp.csr_matrix(([v for _, _, v in eq], ([r for r, _, _ in eq], [c for _, c, _ in eq])),
                      shape=(eq_n, n))
    b = np.array([rhs.get(r, 0.0) for r in range(eq_n)])
    c = np.zeros(n)
    for i, v in cvals.items():
        c[i] = v
    return SdpProblem(n, built.blocks, c, c0, lp, A, b)
