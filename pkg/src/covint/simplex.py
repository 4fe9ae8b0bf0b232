"""Dense two-phase simplex with Bland's rule.

Small exact-rational-scale linear programs on event trees are the only
customers, so the solver favours a transparent tableau over sparse speed:
phase 1 artificials establish feasibility (redundant rows are dropped),
phase 2 optimizes, and Bland's smallest-index entering/leaving rule prevents
cycling on the degenerate vertices these polytopes produce.  The wrapper
accepts equalities, <= inequalities, and free variables (split into
differences) on top of the standard nonnegative form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LinearProgramError

__all__ = ["LpSolution", "solve_lp"]

PIVOT_TOL = 1e-9


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "unbounded" | "infeasible"
    x: np.ndarray | None
    value: float | None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    pivot_row = T[row]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * pivot_row
    basis[row] = col


def _optimize(T: np.ndarray, basis: list[int], m: int, tol: float, max_iter: int) -> str:
    """Run Bland-rule pivots on a tableau whose last row is the objective."""
    for _ in range(max_iter):
        reduced = T[-1, :-1]
        entering = np.nonzero(reduced < -tol)[0]
        if entering.size == 0:
            return "optimal"
        j = int(entering[0])
        col = T[:m, j]
        rows = np.nonzero(col > tol)[0]
        if rows.size == 0:
            return "unbounded"
        ratios = T[rows, -1] / col[rows]
        best = float(np.min(ratios))
        ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        leave = int(ties[np.argmin([basis[i] for i in ties])])
        _pivot(T, basis, leave, j)
    raise LinearProgramError(
        f"simplex did not terminate within {max_iter} pivots", max_iter=max_iter
    )


def _solve_standard(
    c: np.ndarray, A: np.ndarray, b: np.ndarray, tol: float, max_iter: int
) -> LpSolution:
    """min c.x subject to A x = b, x >= 0."""
    m, n = A.shape
    A = A.astype(float, copy=True)
    b = b.astype(float, copy=True)
    neg = b < 0.0
    A[neg] *= -1.0
    b[neg] *= -1.0

    if m > 0:
        T = np.zeros((m + 1, n + m + 1))
        T[:m, :n] = A
        T[:m, n : n + m] = np.eye(m)
        T[:m, -1] = b
        basis = list(range(n, n + m))
        T[-1, :n] = -A.sum(axis=0)
        T[-1, -1] = -b.sum()
        _optimize(T, basis, m, tol, max_iter)
        if -T[-1, -1] > 1e-7 * (1.0 + float(b.sum())):
            return LpSolution("infeasible", None, None)
        # pivot artificials out of the basis; rows where that is impossible
        # are redundant combinations of the others and get dropped
        redundant = []
        for i in range(m):
            if basis[i] >= n:
                cols = np.nonzero(np.abs(T[i, :n]) > tol)[0]
                if cols.size:
                    _pivot(T, basis, i, int(cols[0]))
                else:
                    redundant.append(i)
        keep = [i for i in range(m) if i not in redundant]
        rows = T[keep]
        basis = [basis[i] for i in keep]
    else:
        rows = np.zeros((0, n + 1))
        basis = []

    m2 = len(basis)
    T2 = np.zeros((m2 + 1, n + 1))
    T2[:m2, :n] = rows[:, :n]
    T2[:m2, -1] = rows[:, -1]
    cB = c[basis] if basis else np.zeros(0)
    T2[-1, :n] = c - cB @ T2[:m2, :n]
    T2[-1, -1] = -float(cB @ T2[:m2, -1])
    status = _optimize(T2, basis, m2, tol, max_iter)
    if status == "unbounded":
        return LpSolution("unbounded", None, None)
    x = np.zeros(n)
    x[basis] = np.maximum(T2[:m2, -1], 0.0)
    return LpSolution("optimal", x, float(c @ x))


def solve_lp(
    c,
    *,
    A_eq=None,
    b_eq=None,
    A_ub=None,
    b_ub=None,
    free=None,
    maximize: bool = False,
    tol: float = PIVOT_TOL,
    max_iter: int | None = None,
) -> LpSolution:
    """Solve min (or max) ``c.x`` over ``A_eq x = b_eq``, ``A_ub x <= b_ub``.

    Variables are nonnegative unless flagged in ``free`` (bool mask), in
    which case they are split into positive/negative parts internally.  The
    returned ``x`` is in the original variables.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n0 = c.size
    free = np.zeros(n0, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    if free.shape != (n0,):
        raise ValueError("free mask must match the number of variables")

    blocks = []
    rhs = []
    if A_eq is not None:
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float))
        if A_eq.shape != (b_eq.size, n0):
            raise ValueError("A_eq/b_eq dimensions do not match c")
        blocks.append(("eq", A_eq, b_eq))
    if A_ub is not None:
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float))
        if A_ub.shape != (b_ub.size, n0):
            raise ValueError("A_ub/b_ub dimensions do not match c")
        blocks.append(("ub", A_ub, b_ub))

    # column layout: plus-parts, minus-parts for free vars, slacks for ub rows
    n_free = int(np.count_nonzero(free))
    n_ub = sum(b.size for kind, _, b in blocks if kind == "ub")
    n = n0 + n_free + n_ub
    obj = np.zeros(n)
    obj[:n0] = -c if maximize else c
    minus_col = {}
    col = n0
    for i in np.nonzero(free)[0]:
        minus_col[int(i)] = col
        obj[col] = -obj[i]
        col += 1

    rows_std = []
    rhs_std = []
    slack = col
    for kind, A, b in blocks:
        for r in range(b.size):
            row = np.zeros(n)
            row[:n0] = A[r]
            for i, mc in minus_col.items():
                row[mc] = -A[r, i]
            if kind == "ub":
                row[slack] = 1.0
                slack += 1
            rows_std.append(row)
            rhs_std.append(b[r])
    A_std = np.array(rows_std) if rows_std else np.zeros((0, n))
    b_std = np.array(rhs_std)

    if max_iter is None:
        max_iter = 200 * (A_std.shape[0] + n + 1)
    sol = _solve_standard(obj, A_std, b_std, tol, max_iter)
    if not sol.optimal:
        return sol
    x = sol.x[:n0].copy()
    for i, mc in minus_col.items():
        x[i] -= sol.x[mc]
    value = float(c @ x)
    return LpSolution("optimal", x, value)
