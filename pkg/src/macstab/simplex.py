"""Dense primal simplex for the region-membership scaling program.

Solves  max t  s.t.  sum_s p_s * c[i, s] >= t * beta[i]  for every row i,
sum_s p_s = 1, p >= 0, t >= 0.  The instances are tiny (rows = number of
message classes, columns = number of schedules), so a dense tableau with
Bland's anti-cycling rule is simple, deterministic, and fast enough.
"""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-10


class SimplexError(RuntimeError):
    """Numerical failure (non-convergence or unexpected unboundedness)."""


def solve_scaling(cvals: np.ndarray, betas: np.ndarray, max_iter: int | None = None):
    """Maximize the scaling factor t over mixtures of schedule columns.

    cvals: (m, n) matrix, cvals[i, s] >= 0 the rate row i earns from
    column s.  betas: (m,) strictly positive targets.  Returns
    (t_star, p) where p is the optimal mixture over the n columns.
    """
    cvals = np.asarray(cvals, dtype=float)
    betas = np.asarray(betas, dtype=float)
    m, n = cvals.shape
    if betas.shape != (m,):
        raise ValueError("betas must have one entry per cvals row")
    if np.any(betas <= 0.0):
        raise ValueError("betas must be strictly positive")
    if np.any(cvals < -PIVOT_TOL):
        raise ValueError("cvals must be non-negative")

    # Standard form: variables x = (p_1..p_n, t, u_1..u_m), u = surpluses.
    # Row i: sum_s c[i,s] p_s - beta_i t - u_i = 0;  row m: sum_s p_s = 1.
    ncols = n + 1 + m
    A = np.zeros((m + 1, ncols))
    A[:m, :n] = cvals
    A[:m, n] = -betas
    A[:m, n + 1:] = -np.eye(m)
    A[m, :n] = 1.0
    b = np.zeros(m + 1)
    b[m] = 1.0
    obj = np.zeros(ncols)
    obj[n] = 1.0

    # Feasible start: all mass on column 0 (p_0 = 1, u_i = c[i, 0], t = 0).
    basis = list(range(n + 1, n + 1 + m)) + [0]
    B = A[:, basis]
    try:
        Binv = np.linalg.inv(B)
    except np.linalg.LinAlgError as exc:
        raise SimplexError("initial basis is singular") from exc
    tableau = Binv @ A
    rhs = Binv @ b
    rhs[np.abs(rhs) < PIVOT_TOL] = 0.0

    if max_iter is None:
        max_iter = 2000 * (m + n + 2)
    for _ in range(max_iter):
        cb = obj[basis]
        reduced = obj - cb @ tableau
        # Bland: entering variable = smallest index with positive reduced cost.
        candidates = np.nonzero(reduced > PIVOT_TOL)[0]
        if candidates.size == 0:
            break
        enter = int(candidates[0])
        col = tableau[:, enter]
        rows = np.nonzero(col > PIVOT_TOL)[0]
        if rows.size == 0:
            raise SimplexError("unbounded scaling program; inputs are inconsistent")
        ratios = rhs[rows] / col[rows]
        best = ratios.min()
        tied = rows[ratios <= best + PIVOT_TOL * (1.0 + abs(best))]
        # Bland: leave the basic variable with the smallest variable index.
        leave_row = min(tied, key=lambda r: basis[r])
        piv = tableau[leave_row, enter]
        tableau[leave_row] /= piv
        rhs[leave_row] /= piv
        for r in range(m + 1):
            if r != leave_row and abs(tableau[r, enter]) > 0.0:
                f = tableau[r, enter]
                tableau[r] -= f * tableau[leave_row]
                rhs[r] -= f * rhs[leave_row]
        rhs[np.abs(rhs) < PIVOT_TOL] = 0.0
        basis[leave_row] = enter
    else:
        raise SimplexError(f"simplex did not converge within {max_iter} iterations")

    x = np.zeros(ncols)
    for row, var in enumerate(basis):
        x[var] = rhs[row]
    p = x[:n].copy()
    p[p < 0.0] = 0.0
    total = p.sum()
    if total > 0.0:
        p /= total
    return float(x[n]), p
