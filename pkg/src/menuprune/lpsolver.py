"""Dense linear programming with primal, value, duals and row activity.

The solver is a two-phase primal simplex on a dense tableau with Bland's
anti-cycling rule.  Problems solved here are tiny (a handful of variables,
up to a few hundred rows), so determinism and exact dual information matter
far more than pivoting speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-8
DUAL_SIGN_TOL = 1e-10
PIVOT_EPS = 1e-11

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpError(RuntimeError):
    """Raised when pivoting stalls beyond the iteration cap."""


@dataclass
class LinearProgram:
    """maximize <objective, y>  subject to  A y <= b  and optional bounds.

    bounds is a list of (lo, hi) pairs per variable; None means unbounded
    on that side.  Default is fully free variables.
    """

    objective: np.ndarray
    A: np.ndarray
    b: np.ndarray
    bounds: list | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        m, n = self.A.shape
        if n != self.objective.size or m != self.b.size:
            raise ValueError("inconsistent LP dimensions")
        if m < 1 or n < 1:
            raise ValueError("LP needs at least one row and one variable")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.objective))):
            raise ValueError("LP data must be finite")
        if self.bounds is not None and len(self.bounds) != n:
            raise ValueError("bounds length must match variable count")


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray = field(default=None)
    value: float = float("nan")
    duals: np.ndarray = field(default=None)
    active_rows: np.ndarray = field(default=None)  # rows with slack <= FEAS_TOL
    iterations: int = 0


def _expand_bounds(lp: LinearProgram):
    """Convert bounds into extra <= rows; return (A, b, row_map).

    row_map[k] is the original row index for row k, or -1 for a bound row.
    """
    m, n = lp.A.shape
    rows_a = [lp.A]
    rows_b = [lp.b]
    row_map = list(range(m))
    if lp.bounds is not None:
        for j, (lo, hi) in enumerate(lp.bounds):
            if hi is not None:
                e = np.zeros(n)
                e[j] = 1.0
                rows_a.append(e[None, :])
                rows_b.append(np.array([float(hi)]))
                row_map.append(-1)
            if lo is not None:
                e = np.zeros(n)
                e[j] = -1.0
                rows_a.append(e[None, :])
                rows_b.append(np.array([-float(lo)]))
                row_map.append(-1)
    return np.vstack(rows_a), np.concatenate(rows_b), np.array(row_map)


def _bland_simplex(T: np.ndarray, basis: np.ndarray, n_cols: int,
                   max_iter: int) -> int:
    """Run primal simplex pivots in place on tableau T (last row = objective
    to maximize, last column = rhs).  Returns iterations used.

    Bland's rule: entering variable is the lowest-index column with positive
    reduced cost; leaving row is the ratio-test winner with the lowest basis
    index on ties.
    """
    m = T.shape[0] - 1
    it = 0
    while True:
        if it >= max_iter:
            raise LpError(
                f"numerical failure: simplex stalled after {it} pivots")
        red = T[-1, :n_cols]
        enter = -1
        for j in range(n_cols):
            if red[j] > FEAS_TOL:
                enter = j
                break
        if enter < 0:
            return it
        col = T[:m, enter]
        best_ratio = np.inf
        leave = -1
        for r in range(m):
            if col[r] > PIVOT_EPS:
                ratio = T[r, -1] / col[r]
                if ratio < best_ratio - PIVOT_EPS or (
                    abs(ratio - best_ratio) <= PIVOT_EPS
                    and (leave < 0 or basis[r] < basis[leave])
                ):
                    best_ratio = ratio
                    leave = r
        if leave < 0:
            return -1  # unbounded direction
        piv = T[leave, enter]
        T[leave] /= piv
        for r in range(m + 1):
            if r != leave and abs(T[r, enter]) > 0.0:
                T[r] -= T[r, enter] * T[leave]
        basis[leave] = enter
        it += 1


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve the LP; deterministic for fixed input.

    Free variables are split into positive parts internally.  Duals are the
    multipliers of the original rows (nonnegative for binding <= rows);
    bound rows added from `bounds` are folded into the primal only.
    """
    A, b, row_map = _expand_bounds(lp)
    m, n = A.shape
    c = lp.objective

    # split y = y+ - y- so every simplex variable is nonnegative
    A2 = np.hstack([A, -A])
    c2 = np.concatenate([c, -c])
    n2 = 2 * n

    # flip rows with negative rhs so b >= 0 for phase 1
    flip = b < 0.0
    sign = np.where(flip, -1.0, 1.0)
    A2 = A2 * sign[:, None]
    b2 = b * sign

    # columns: [y+/y- | slack (one per row) | artificial (one per row)]
    # slack coefficient is +1 for unflipped rows, -1 for flipped (surplus)
    n_slack = m
    S = np.diag(sign)
    n_art = m
    T = np.zeros((m + 1, n2 + n_slack + n_art + 1))
    T[:m, :n2] = A2
    T[:m, n2:n2 + n_slack] = S
    T[:m, n2 + n_slack:n2 + n_slack + n_art] = np.eye(m)
    T[:m, -1] = b2

    max_iter = 50 * (m + n)

    # phase 1: maximize -sum(artificials)
    basis = np.arange(n2 + n_slack, n2 + n_slack + n_art)
    T[-1, :] = 0.0
    T[-1, n2 + n_slack:n2 + n_slack + n_art] = -1.0
    # price out the artificial basis
    T[-1, :] += T[:m].sum(axis=0)
    T[-1, n2 + n_slack:n2 + n_slack + n_art] = 0.0
    T[-1, -1] = b2.sum()

    it1 = _bland_simplex(T, basis, n2 + n_slack, max_iter)
    if it1 < 0:
        raise LpError("numerical failure: unbounded phase-1 problem")
    if T[-1, -1] > 1e-7:
        return LpSolution(status=INFEASIBLE, iterations=it1)

    # drive any artificial still basic out (degenerate but feasible rows)
    for r in range(m):
        if basis[r] >= n2 + n_slack:
            pivoted = False
            for j in range(n2 + n_slack):
                if abs(T[r, j]) > PIVOT_EPS:
                    piv = T[r, j]
                    T[r] /= piv
                    for rr in range(m + 1):
                        if rr != r and abs(T[rr, j]) > 0.0:
                            T[rr] -= T[rr, j] * T[r]
                    basis[r] = j
                    pivoted = True
                    break
            if not pivoted:
                basis[r] = -1  # redundant zero row

    # phase 2 objective
    T[-1, :] = 0.0
    T[-1, :n2] = c2
    for r in range(m):
        j = basis[r]
        if j >= 0 and abs(T[-1, j]) > 0.0:
            T[-1] -= T[-1, j] * T[r]
    # forbid artificials from re-entering
    T[-1, n2 + n_slack:n2 + n_slack + n_art] = -1e30

    it2 = _bland_simplex(T, basis, n2 + n_slack, max_iter)
    if it2 < 0:
        return LpSolution(status=UNBOUNDED, iterations=it1)

    # read primal
    y2 = np.zeros(n2 + n_slack)
    for r in range(m):
        j = basis[r]
        if 0 <= j < n2 + n_slack:
            y2[j] = T[r, -1]
    y = y2[:n] - y2[n:n2]
    value = float(c @ y)

    # duals: the slack column of row k has coefficient sign_k and price
    # pi_k = -red_k * sign_k for the equality row; the original <= row's
    # multiplier is lambda_k = sign_k * pi_k = -red_k
    red = T[-1, n2:n2 + n_slack]
    lam_all = -red.copy()
    lam_all[np.abs(lam_all) < DUAL_SIGN_TOL] = 0.0

    slack = b - A @ y
    active_all = slack <= FEAS_TOL

    keep = row_map >= 0
    duals = lam_all[keep]
    active = active_all[keep]
    return LpSolution(
        status=OPTIMAL,
        primal=y,
        value=value,
        duals=duals,
        active_rows=np.flatnonzero(active),
        iterations=it1 + it2,
    )
