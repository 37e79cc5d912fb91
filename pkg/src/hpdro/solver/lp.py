"""Dual simplex in active-set form on a dense explicit basis inverse.

Every row and bound is written as a ``>=`` constraint ``G_k x >= g_k``:
row lower sides, negated row upper sides, variable lower bounds and negated
variable upper bounds. The LP dual, ``max g.lam`` subject to
``G^T lam = c, lam >= 0``, has only ``n`` equality rows, so a basis is a set
of ``n`` active constraints and its inverse is ``n x n`` however many rows
the model has. The simplex multipliers of that dual are the primal point,
and the reduced cost of constraint ``k`` is its primal violation.

With every structural variable boxed, the basis made of each variable's
lower bound (cost >= 0) or upper bound (cost < 0) is dual feasible, so no
phase 1 is needed. Changing ``g`` (bounds in branch and bound) keeps the
basis dual feasible, which gives cheap warm starts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | cutoff | iteration_limit
    values: np.ndarray | None
    objective: float
    iterations: int = 0
    duals: np.ndarray | None = None


class DualSimplex:
    """Reusable solver state for ``min c.x, row_lo <= A x <= row_hi, lb <= x <= ub``.

    Constraint ``k`` indexes ``[row lower sides (m), row upper sides (m),
    variable lower bounds (n), variable upper bounds (n)]``.
    """

    feas_tol = 1e-9
    pivot_tol = 1e-9
    refactor_every = 100
    stall_limit = 100

    def __init__(self, A, row_lo, row_hi, c):
        self.A = np.ascontiguousarray(A, dtype=float).reshape(len(row_lo), len(c))
        self.m, self.n = self.A.shape
        self.c = np.asarray(c, float)
        self.row_lo = np.asarray(row_lo, float)
        self.row_hi = np.asarray(row_hi, float)
        self.iterations = 0
        self.basis = None

    # ----------------------------------------------------------------- setup
    def _rows(self, ks):
        """Constraint coefficient rows ``G_k`` for indices ``ks``."""
        ks = np.asarray(ks)
        m, n = self.m, self.n
        out = np.zeros((ks.size, n))
        for i, k in enumerate(ks):
            if k < m:
                out[i] = self.A[k]
            elif k < 2 * m:
                out[i] = -self.A[k - m]
            elif k < 2 * m + n:
                out[i, k - 2 * m] = 1.0
            else:
                out[i, k - 2 * m - n] = -1.0
        return out

    def _row(self, k):
        return self._rows([k])[0]

    def load(self, lb, ub, basis=None, status=None):
        """Set variable bounds and the starting basis (bound basis if none given)."""
        lb = np.asarray(lb, float)
        ub = np.asarray(ub, float)
        self.g = np.concatenate([self.row_lo, -self.row_hi, lb, -ub])
        if basis is None:
            j = np.arange(self.n)
            basis = np.where(self.c >= 0, 2 * self.m + j, 2 * self.m + self.n + j)
        self.basis = np.array(basis, dtype=int)
        if np.any(~np.isfinite(self.g[self.basis])):
            raise ValueError("basis contains an infinite bound; finite bounds required")
        self._factor()

    def _factor(self):
        n = self.n
        if n == 0:
            self.Binv = np.zeros((0, 0))
            self.lam = np.zeros(0)
            self.x = np.zeros(0)
            self._since_factor = 0
            return
        # columns of the dual basis are G_k^T
        B = self._rows(self.basis).T
        self.Binv = np.linalg.inv(B)
        self.lam = self.Binv @ self.c
        np.maximum(self.lam, 0.0, out=self.lam, where=self.lam > -1e-12)
        self._primal()
        self._since_factor = 0

    def _primal(self):
        self.x = self.Binv.T @ self.g[self.basis]

    def snapshot(self):
        return self.basis.copy(), None

    def set_bounds(self, j, lo, hi):
        """Change bounds of structural ``j`` in place (warm start)."""
        self.g[2 * self.m + j] = lo
        self.g[2 * self.m + self.n + j] = -hi
        self._primal()

    # ----------------------------------------------------------------- solve
    def _violations(self):
        x = self.x
        ax = self.A @ x
        return np.concatenate([self.row_lo - ax, ax - self.row_hi,
                               self.g[2 * self.m: 2 * self.m + self.n] - x,
                               x + self.g[2 * self.m + self.n:]])

    def objective(self) -> float:
        return float(self.c @ self.x)

    def solve(self, cutoff: float = np.inf, max_iter: int = 100000) -> LpSolution:
        bland = False
        best_obj = -np.inf
        stall = 0
        it = 0
        while True:
            if self._since_factor >= self.refactor_every:
                self._factor()
            viol = self._violations()
            scale = np.maximum(1.0, np.abs(np.nan_to_num(self.g, posinf=0.0, neginf=0.0)))
            cand = viol > self.feas_tol * scale
            cand[self.basis] = False
            if not cand.any():
                if self._since_factor:
                    self._factor()
                    viol = self._violations()
                    cand = viol > self.feas_tol * scale
                    cand[self.basis] = False
                    if cand.any():
                        continue
                return self._finish("optimal", it)
            obj = self.objective()
            if obj > cutoff:
                return self._finish("cutoff", it)
            if obj > best_obj + 1e-12 * max(1.0, abs(obj)):
                best_obj, stall = obj, 0
            else:
                stall += 1
                if stall > self.stall_limit and not bland:
                    log.debug("dual simplex stalled; switching to Bland's rule")
                    bland = True
            if it >= max_iter:
                return self._finish("iteration_limit", it)
            if bland:
                k = int(np.flatnonzero(cand)[0])
            else:
                k = int(np.argmax(np.where(cand, viol, -np.inf)))
            d = self.Binv @ self._row(k)
            pos = d > self.pivot_tol
            idx = np.flatnonzero(pos)
            if idx.size == 0:
                return self._finish("infeasible", it)
            lam = self.lam[idx]
            dd = d[idx]
            if bland:
                ratios = np.maximum(lam, 0.0) / dd
                best = ratios.min()
                ties = idx[ratios <= best + 1e-12 * max(1.0, best)]
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                # Harris two-pass ratio test
                bound = np.min((np.maximum(lam, 0.0) + self.feas_tol) / dd)
                ok = lam / dd <= bound
                r = int(idx[ok][np.argmax(dd[ok])])
            theta = max(self.lam[r], 0.0) / d[r]
            self.lam -= theta * d
            self.lam[r] = theta
            np.maximum(self.lam, 0.0, out=self.lam)
            prow = self.Binv[r] / d[r]
            self.Binv -= np.outer(d, prow)
            self.Binv[r] = prow
            self.basis[r] = k
            self._primal()
            self._since_factor += 1
            it += 1
            self.iterations += 1

    def _finish(self, status, it) -> LpSolution:
        values = self.x.copy()
        full = np.zeros(2 * self.m + 2 * self.n)
        full[self.basis] = self.lam
        duals = full[: self.m] - full[self.m: 2 * self.m]
        return LpSolution(status, values, self.objective(), it, duals)


def row_bounds(sense, rhs):
    sense = np.asarray(sense)
    rhs = np.asarray(rhs, float)
    lo = np.where(sense == "L", -np.inf, rhs)
    hi = np.where(sense == "G", np.inf, rhs)
    return lo, hi


def solve_lp(instance, lb=None, ub=None) -> LpSolution:
    """LP relaxation of a :class:`~hpdro.model.MilpInstance` (integrality dropped)."""
    lo, hi = row_bounds(instance.sense, instance.rhs)
    lb = instance.lb if lb is None else lb
    ub = instance.ub if ub is None else ub
    if np.any(lb > ub):
        return LpSolution("infeasible", None, np.inf)
    ds = DualSimplex(instance.A, lo, hi, instance.c)
    ds.load(lb, ub)
    sol = ds.solve()
    if sol.status == "infeasible":
        sol.values = None
        sol.objective = np.inf
    return sol
