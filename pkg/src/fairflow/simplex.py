"""Two-phase revised simplex with an explicit dense basis inverse.

Solves  min c.x  s.t.  A_i x (<=, =, >=) b_i,  x >= 0.
B^-1 is kept explicitly, updated by elementary row operations per pivot
and refactorised from scratch every ``refactor`` pivots.  Bland's rule is
the default pivoting rule because it cannot cycle on degenerate problems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dger
from scipy.sparse.linalg import splu

from .errors import ParameterError


@dataclass
class LPResult:
    status: str                 # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray
    objective: float
    duals: np.ndarray           # one per constraint row, sign as in the original rows
    iterations: int
    basis: np.ndarray | None     # reusable warm-start basis (no artificials), else None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Tableau:
    def __init__(self, M: sp.csc_matrix, b: np.ndarray, basis, refactor: int):
        self.M = M
        self.MT = M.T.tocsr()
        self.b = b
        self.basis = np.array(basis)
        self.refactor = refactor
        self.since = 0
        self.factor()

    def column(self, j: int) -> np.ndarray:
        lo, hi = self.M.indptr[j], self.M.indptr[j + 1]
        return self.Binv[:, self.M.indices[lo:hi]] @ self.M.data[lo:hi]

    def factor(self):
        B = self.M[:, self.basis].tocsc()
        self.Binv = np.ascontiguousarray(splu(B).solve(np.eye(B.shape[0])))
        self.xB = self.Binv @ self.b
        self.since = 0

    def pivot(self, row: int, col: int, u: np.ndarray):
        piv = u[row]
        prow = self.Binv[row] / piv
        xr = self.xB[row] / piv
        # in-place rank-1 update; the pivot row is restored afterwards
        # Binv.T is Fortran-ordered, so dger updates Binv without a temporary
        dger(-1.0, prow, u, a=self.Binv.T, overwrite_a=True)
        self.xB -= u * xr
        self.Binv[row] = prow
        self.xB[row] = xr
        self.basis[row] = col
        self.since += 1
        if self.since >= self.refactor:
            self.factor()


def _run(tab: _Tableau, cost: np.ndarray, allowed: np.ndarray, rule: str, tol: float,
         max_iter: int) -> tuple[str, int]:
    scale = max(1.0, float(np.abs(cost).max(initial=0.0)))
    for it in range(max_iter):
        y = cost[tab.basis] @ tab.Binv
        red = cost - tab.MT @ y
        red[tab.basis] = 0.0
        cand = np.flatnonzero(allowed & (red < -tol * scale))
        if cand.size == 0:
            return "optimal", it
        j = int(cand[0]) if rule == "bland" else int(cand[np.argmin(red[cand])])
        u = tab.column(j)
        pos = np.flatnonzero(u > tol)
        if pos.size == 0:
            return "unbounded", it
        ratios = np.maximum(tab.xB[pos], 0.0) / u[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, best)]
        r = int(ties[np.argmin(tab.basis[ties])])
        tab.pivot(r, j, u)
    return "iteration_limit", max_iter


def solve_lp(c, A, b, senses, rule: str = "bland", tol: float = 1e-9,
             max_iter: int = 100_000, refactor: int = 64, basis=None) -> LPResult:
    """Two-phase revised simplex; ``senses`` holds one of '<=', '=', '>=' per row.

    ``A`` may be dense or scipy-sparse.  ``basis`` optionally warm-starts
    phase II: indices into [structural columns | one slack per inequality
    row, in row order].  An unusable warm start falls back to phase I.
    """
    c = np.asarray(c, dtype=float)
    A = sp.csr_matrix(A, dtype=float) if sp.issparse(A) else sp.csr_matrix(
        np.atleast_2d(np.asarray(A, dtype=float)))
    b = np.asarray(b, dtype=float).copy()
    m, n = A.shape
    if rule not in ("bland", "dantzig"):
        raise ParameterError(f"unknown pivot rule {rule!r}")
    if len(senses) != m or b.shape != (m,) or c.shape != (n,):
        raise ParameterError("inconsistent LP dimensions")
    sign = np.ones(m)
    senses = list(senses)
    for i in range(m):
        if senses[i] not in ("<=", "=", ">="):
            raise ParameterError(f"unknown constraint sense {senses[i]!r}")
        if b[i] < 0:
            sign[i] = -1.0
            b[i] *= -1
            senses[i] = {"<=": ">=", ">=": "<=", "=": "="}[senses[i]]
    A = sp.diags(sign) @ A

    start: list[int] = [-1] * m
    slack_rows, slack_vals = [], []
    for i, s in enumerate(senses):
        if s == "=":
            continue
        slack_rows.append(i)
        slack_vals.append(1.0 if s == "<=" else -1.0)
        if s == "<=":
            start[i] = n + len(slack_rows) - 1
    n_struct = n + len(slack_rows)
    art_rows = [i for i in range(m) if start[i] < 0]
    for j, i in enumerate(art_rows):
        start[i] = n_struct + j
    nxt = n_struct + len(art_rows)
    S = sp.csr_matrix((slack_vals, (slack_rows, range(len(slack_rows)))),
                      shape=(m, len(slack_rows)))
    R = sp.csr_matrix((np.ones(len(art_rows)), (art_rows, range(len(art_rows)))),
                      shape=(m, len(art_rows)))
    M = sp.hstack([A, S, R]).tocsc()
    allowed = np.ones(nxt, dtype=bool)
    tab = None
    if basis is not None:
        try:
            warm = np.asarray(basis, dtype=int)
            if warm.shape == (m,) and warm.min() >= 0 and warm.max() < n_struct:
                tab = _Tableau(M, b, warm, refactor)
                if tab.xB.min() < -1e-9 * max(1.0, float(np.abs(b).max())):
                    tab = None
        except (np.linalg.LinAlgError, RuntimeError):
            tab = None
    warm_started = tab is not None
    if tab is None:
        tab = _Tableau(M, b, start, refactor)
    iters = 0

    if art_rows and not warm_started:
        phase1 = np.zeros(nxt)
        phase1[n_struct:] = 1.0
        status, it = _run(tab, phase1, allowed, rule, tol, max_iter)
        iters += it
        infeas = float(phase1[tab.basis] @ tab.xB)
        if status != "optimal" or infeas > 1e-9 * max(1.0, float(np.abs(b).max())):
            return LPResult("infeasible", np.zeros(n), np.nan, np.zeros(m), iters, tab.basis)
        # drive zero-level artificials out of the basis where possible
        for r in range(m):
            if tab.basis[r] < n_struct:
                continue
            row = tab.MT[:n_struct] @ tab.Binv[r]
            nz = np.flatnonzero(np.abs(row) > 1e-9)
            nz = nz[~np.isin(nz, tab.basis)]
            if nz.size:
                j = int(nz[0])
                tab.pivot(r, j, tab.column(j))
    allowed[n_struct:] = False

    cost = np.zeros(nxt)
    cost[:n] = c
    status, it = _run(tab, cost, allowed, rule, tol, max_iter - iters)
    iters += it
    tab.factor()
    x = np.zeros(nxt)
    x[tab.basis] = tab.xB
    x = np.maximum(x, 0.0)
    y = cost[tab.basis] @ tab.Binv
    reusable = tab.basis.copy() if tab.basis.max() < n_struct else None
    return LPResult(status, x[:n], float(c @ x[:n]), y * sign, iters, reusable)
