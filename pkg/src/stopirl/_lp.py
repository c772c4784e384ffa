"""Small sparse linear-program builder on top of scipy's HiGHS interface."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}


class LinearProgram:
    """Collects variables and sparse rows of ``A_ub x <= b_ub`` and ``A_eq x = b_eq``."""

    def __init__(self):
        self.n = 0
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.cost: list[float] = []
        self._ub = ([], [], [], [])  # rows, cols, vals, rhs
        self._eq = ([], [], [], [])

    def add_vars(self, count: int, lower=0.0, upper=None, cost=0.0) -> np.ndarray:
        idx = np.arange(self.n, self.n + count)
        self.n += count
        self.lower.extend(np.broadcast_to(np.asarray(lower, dtype=float), (count,)).tolist())
        self.upper.extend(np.broadcast_to(np.asarray(np.inf if upper is None else upper, dtype=float), (count,)).tolist())
        self.cost.extend(np.broadcast_to(np.asarray(cost, dtype=float), (count,)).tolist())
        return idx

    def _add(self, store, cols, vals, rhs):
        rows, cc, vv, bb = store
        r = len(bb)
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape).ravel()
        keep = vals != 0.0
        rows.extend([r] * int(keep.sum()))
        cc.extend(cols[keep].tolist())
        vv.extend(vals[keep].tolist())
        bb.append(float(rhs))
        return r

    def add_le(self, cols, vals, rhs) -> int:
        """Add the row sum(vals * x[cols]) <= rhs and return its index."""
        return self._add(self._ub, cols, vals, rhs)

    def add_eq(self, cols, vals, rhs) -> int:
        return self._add(self._eq, cols, vals, rhs)

    @staticmethod
    def _matrix(store, n):
        rows, cols, vals, rhs = store
        if not rhs:
            return None, None
        A = coo_matrix((vals, (rows, cols)), shape=(len(rhs), n)).tocsr()
        return A, np.array(rhs)

    def solve(self):
        """Run HiGHS; returns the scipy result object."""
        A_ub, b_ub = self._matrix(self._ub, self.n)
        A_eq, b_eq = self._matrix(self._eq, self.n)
        bounds = np.column_stack([self.lower, self.upper])
        bounds = [(lo, None if np.isinf(hi) else hi) for lo, hi in bounds]
        bounds = [(None if np.isinf(lo) else lo, hi) for lo, hi in bounds]
        return linprog(
            np.array(self.cost), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
            bounds=bounds, method="highs", options=HIGHS_OPTIONS,
        )


def status_name(res) -> str:
    """Map a linprog status onto optimal / infeasible / numerical-failure."""
    if res.status == 0:
        return "optimal"
    if res.status == 2:
        return "infeasible"
    return "numerical-failure"
