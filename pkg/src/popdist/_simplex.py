"""Dense two-phase primal simplex with Bland's pivot rule.

The LPs solved in this package are small (tens of rows, up to ~2000
columns), so the basis system is factored from scratch every iteration;
nothing is incrementally updated and no numerical drift accumulates.
Bland's rule (smallest eligible index, for both entering and leaving
variables) makes every solve deterministic, which the CLI's bit-identical
output contract relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LpError(RuntimeError):
    pass


class LpInfeasibleError(LpError):
    pass


class NonConvergenceError(LpError):
    """A solver hit its iteration cap before reaching optimality."""


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    iterations: int


_PIVOT_TOL = 1e-8


def _simplex_core(a, b, c, basis, tol, max_iter, start_iter=0):
    """Run primal simplex from a feasible basis; returns (basis, x_B, iters).

    Entering variable: most negative reduced cost, smallest index on ties
    (Dantzig). After a run of degenerate pivots with no objective decrease,
    switches to Bland's rule (smallest eligible index everywhere) until the
    objective strictly drops again, which prevents cycling. Both rules are
    pure index arithmetic, so solves are deterministic.
    """
    iters = start_iter
    last_objective = np.inf
    stall = 0
    while True:
        basis_matrix = a[:, basis]
        x_basic = np.maximum(np.linalg.solve(basis_matrix, b), 0.0)
        y = np.linalg.solve(basis_matrix.T, c[basis])
        reduced = c - y @ a
        reduced[basis] = 0.0
        eligible = np.flatnonzero(reduced < -tol)
        if eligible.size == 0:
            return basis, x_basic, iters

        objective = float(c[basis] @ x_basic)
        if objective < last_objective - 1e-12 * (1.0 + abs(last_objective)):
            stall = 0
        else:
            stall += 1
        last_objective = objective

        if stall > 30:
            entering = int(eligible[0])  # Bland
        else:
            entering = int(eligible[np.argmin(reduced[eligible])])

        direction = np.linalg.solve(basis_matrix, a[:, entering])
        positive = np.flatnonzero(direction > _PIVOT_TOL)
        if positive.size == 0:
            raise LpError("objective unbounded below")
        ratios = x_basic[positive] / direction[positive]
        best = ratios.min()
        ties = positive[ratios <= best + 1e-12 * (1.0 + abs(best))]
        if stall > 30:
            leaving_row = int(ties[np.argmin([basis[r] for r in ties])])
        else:
            leaving_row = int(ties[np.argmax(direction[ties])])
        basis[leaving_row] = entering

        iters += 1
        if iters >= max_iter:
            raise NonConvergenceError(
                f"simplex exceeded {max_iter} iterations"
            )


def solve_lp(c, a_eq=None, b_eq=None, a_ub=None, b_ub=None,
             tol: float = 1e-9, max_iter: int | None = None) -> LpResult:
    """Minimize c @ x subject to a_eq x = b_eq, a_ub x <= b_ub, x >= 0."""
    c = np.asarray(c, dtype=float)
    n = c.size
    if a_eq is not None:
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
    n_eq = 0 if a_eq is None else a_eq.shape[0]
    n_ub = 0 if a_ub is None else np.atleast_2d(a_ub).shape[0]

    a_rows = np.zeros((n_eq + n_ub, n + n_ub))
    b = np.zeros(n_eq + n_ub)
    if n_eq:
        a_rows[:n_eq, :n] = a_eq
        b[:n_eq] = np.asarray(b_eq, dtype=float)
    if n_ub:
        a_rows[n_eq:, :n] = np.atleast_2d(np.asarray(a_ub, dtype=float))
        a_rows[n_eq:, n:] = np.eye(n_ub)
        b[n_eq:] = np.asarray(b_ub, dtype=float)

    m, n_total = a_rows.shape
    if m == 0:
        raise ValueError("LP needs at least one constraint row")
    neg = b < 0
    a_rows[neg] *= -1.0
    b[neg] *= -1.0

    if max_iter is None:
        max_iter = 1000 + 20 * (m + n_total)

    # Phase 1: artificial identity basis, minimize total artificial mass.
    a_full = np.hstack([a_rows, np.eye(m)])
    c_phase1 = np.concatenate([np.zeros(n_total), np.ones(m)])
    basis = list(range(n_total, n_total + m))
    basis, x_basic, iters = _simplex_core(a_full, b, c_phase1, basis, tol, max_iter)
    if float(c_phase1[basis] @ x_basic) > 1e-7:
        raise LpInfeasibleError("phase 1 ended with positive artificial mass")

    # Drive any residual artificials out of the basis (or drop their rows).
    keep_rows = np.ones(m, dtype=bool)
    basis_matrix = a_full[:, basis]
    for row in range(m):
        if basis[row] < n_total:
            continue
        tableau_row = np.linalg.solve(basis_matrix, a_rows)[row]
        candidates = np.flatnonzero(np.abs(tableau_row) > 1e-8)
        candidates = [j for j in candidates if j not in basis]
        if candidates:
            basis[row] = int(candidates[0])
            basis_matrix = a_full[:, basis]
        else:
            keep_rows[row] = False
    if not np.all(keep_rows):
        a_rows = a_rows[keep_rows]
        b = b[keep_rows]
        basis = [basis[r] for r in range(m) if keep_rows[r]]
        m = a_rows.shape[0]

    # Phase 2 on the original columns.
    c_full = np.concatenate([c, np.zeros(n_total - n)])
    basis, x_basic, iters = _simplex_core(
        a_rows, b, c_full, basis, tol, max_iter, start_iter=iters
    )
    x = np.zeros(n_total)
    x[basis] = x_basic
    return LpResult(x=x[:n], objective=float(c @ x[:n]), iterations=iters)
