"""Self-contained two-phase revised simplex for small LPs.

Solves ``min c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.
The basis inverse is kept explicitly (product-form updates with periodic
refactorization), which is adequate for desk-scale instances of a few
thousand columns and a few hundred rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import DTCEError


class LPError(DTCEError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    y_ub: np.ndarray
    y_eq: np.ndarray
    iterations: int
    status: str = "optimal"


def _as_csc(A, n):
    if A is None:
        return sp.csc_matrix((0, n))
    return sp.csc_matrix(A, dtype=float)


class _Simplex:
    def __init__(self, A: sp.csc_matrix, b: np.ndarray, basis: list[int], refactor_every: int = 64):
        self.A = A
        self.b = b
        self.m = A.shape[0]
        self.basis = list(basis)
        self.refactor_every = refactor_every
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis].toarray()
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        self.since = 0

    def column(self, j):
        col = self.A[:, j]
        return self.Binv[:, col.indices] @ col.data

    def run(self, cost: np.ndarray, allowed: np.ndarray, tol: float, max_iter: int, it0: int = 0):
        """Iterate to optimality for ``cost``; ``allowed`` masks entering columns."""
        it = it0
        degenerate = 0
        piv_tol = 1e-11
        while True:
            cB = cost[self.basis]
            y = cB @ self.Binv
            rc = cost - self.A.T @ y
            rc[self.basis] = 0.0
            cand = allowed & (rc < -tol)
            if not cand.any():
                return y, it
            if degenerate > 30:
                j = int(np.flatnonzero(cand)[0])  # Bland
            else:
                j = int(np.argmin(np.where(cand, rc, np.inf)))
            d = self.column(j)
            pos = d > piv_tol
            if not pos.any():
                raise LPError("LP is unbounded")
            ratios = np.full(self.m, np.inf)
            ratios[pos] = np.maximum(self.xB[pos], 0.0) / d[pos]
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
            r = int(min(ties, key=lambda t: self.basis[t]))
            theta = max(self.xB[r], 0.0) / d[r]
            self.xB -= theta * d
            self.xB[r] = theta
            piv = d[r]
            row = self.Binv[r] / piv
            self.Binv -= np.outer(d, row)
            self.Binv[r] = row
            self.basis[r] = j
            degenerate = degenerate + 1 if theta <= 1e-14 else 0
            it += 1
            self.since += 1
            if self.since >= self.refactor_every:
                self.refactor()
            if it > max_iter:
                raise LPError(f"simplex exceeded {max_iter} iterations")


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float | None = None, max_iter: int | None = None) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    Aub = _as_csc(A_ub, n)
    Aeq = _as_csc(A_eq, n)
    bub = np.asarray(b_ub if b_ub is not None else [], dtype=float)
    beq = np.asarray(b_eq if b_eq is not None else [], dtype=float)
    mu, me = Aub.shape[0], Aeq.shape[0]
    m = mu + me
    # standard form columns: [x | slacks | artificials]
    A = sp.vstack([sp.hstack([Aub, sp.identity(mu, format="csc")]), sp.hstack([Aeq, sp.csc_matrix((me, mu))])]).tocsc()
    b = np.concatenate([bub, beq])
    sign = np.where(b < 0, -1.0, 1.0)
    A = (sp.diags(sign) @ A).tocsc()
    b = b * sign
    n_std = n + mu
    need_art = [i for i in range(m) if not (i < mu and sign[i] > 0)]
    art = sp.csc_matrix((np.ones(len(need_art)), (need_art, np.arange(len(need_art)))), shape=(m, len(need_art)))
    A_full = sp.hstack([A, art]).tocsc()
    n_full = A_full.shape[1]
    basis = [0] * m
    for i in range(mu):
        if sign[i] > 0:
            basis[i] = n + i
    for t, i in enumerate(need_art):
        basis[i] = n_std + t
    scale = 1.0 + float(np.max(np.abs(c))) if n else 1.0
    tol = tol if tol is not None else 1e-10 * scale
    max_iter = max_iter or 20 * (m + n_full) + 1000
    solver = _Simplex(A_full, b, basis)
    it = 0
    if need_art:
        c1 = np.zeros(n_full)
        c1[n_std:] = 1.0
        allowed = np.ones(n_full, dtype=bool)
        _, it = solver.run(c1, allowed, 1e-12, max_iter)
        infeas = float(np.sum(np.maximum(solver.xB, 0.0)[np.array(solver.basis) >= n_std]))
        if infeas > 1e-9 * max(1.0, float(np.abs(b).max(initial=0.0))):
            bad = [i for i, j in enumerate(solver.basis) if j >= n_std and solver.xB[i] > 1e-9]
            rows = [("ub" if need_art[solver.basis[i] - n_std] < mu else "eq",
                     need_art[solver.basis[i] - n_std] - (0 if need_art[solver.basis[i] - n_std] < mu else mu)) for i in bad]
            raise LPError(f"LP is infeasible; violated constraints {rows}")
        # drive zero-level artificials out of the basis where possible
        for r in range(m):
            if solver.basis[r] < n_std:
                continue
            row = solver.Binv[r] @ A_full[:, :n_std]
            row = np.asarray(row).ravel()
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            cand = [j for j in cand if j not in solver.basis]
            if cand:
                j = int(cand[0])
                d = solver.column(j)
                piv = d[r]
                rr = solver.Binv[r] / piv
                solver.Binv -= np.outer(d, rr)
                solver.Binv[r] = rr
                solver.basis[r] = j
        solver.refactor()
    c2 = np.concatenate([c, np.zeros(n_full - n)])
    allowed = np.zeros(n_full, dtype=bool)
    allowed[:n_std] = True
    y, it = solver.run(c2, allowed, tol, max_iter, it)
    x_full = np.zeros(n_full)
    x_full[solver.basis] = np.maximum(solver.xB, 0.0)
    x = x_full[:n]
    y = y * sign
    return LPResult(x, float(c @ x), y[:mu], y[mu:], it)
