"""Primal simplex solvers.

:func:`revised_simplex` is a dense revised simplex for standard-form
programs ``min c^T x  s.t.  A x = b,  x >= 0`` started from a supplied
feasible basis. Its basis inverse is updated by rank-one pivots and
refactorized every ``refresh`` pivots.

:func:`l1_simplex` solves the L1 fitting program with the same pricing and
ratio rules, but exploits that all but a few basic columns are signed unit
vectors, so each pivot costs ``O(N r)`` instead of ``O(N^2)``.

Both use Dantzig pricing (most negative reduced cost). After a streak of
pivots without progress they switch to Bland's smallest-index rule, which
cannot cycle, and return to Dantzig pricing after the next step that makes
progress.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Stalled

DEGENERATE_STREAK = 30
PIVOT_TOL = 1e-7


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    basis: np.ndarray
    pivots: int


def revised_simplex(c, A, b, basis, max_pivots=None, refresh=50, tol=1e-11,
                    unbounded_ok=False):
    """Solve the standard-form LP from the feasible ``basis``.

    With ``unbounded_ok`` the caller asserts the objective is bounded below,
    so an entering column without a positive pivot (after a fresh
    factorization) is treated as pricing noise and skipped.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    basis = np.array(basis, dtype=int)
    if basis.shape != (m,):
        raise ValueError("basis must name one column per constraint row")
    if max_pivots is None:
        max_pivots = 50 * n

    feas_tol = 1e-9 * (1.0 + np.abs(b).max(initial=0.0))
    col_norm = np.abs(A).sum(axis=0)
    absc = np.abs(c)

    Binv = np.linalg.inv(A[:, basis])
    xB = Binv @ b
    if np.any(xB < -feas_tol):
        raise ValueError("starting basis is not primal feasible")
    xB = np.maximum(xB, 0.0)

    in_basis = np.zeros(n, dtype=bool)
    in_basis[basis] = True
    pivots = 0
    since_refresh = 0
    streak = 0
    skip = np.zeros(n, dtype=bool)

    def refactor():
        inv = np.linalg.inv(A[:, basis])
        return inv, np.maximum(inv @ b, 0.0)

    while True:
        y = c[basis] @ Binv
        d = c - A.T @ y
        d[in_basis] = 0.0
        # reduced costs are only trusted beyond the rounding in c_j - A_j^T y
        dtol = tol * (1.0 + absc + col_norm * np.abs(y).max(initial=0.0))
        candidates = np.flatnonzero((d < -dtol) & ~skip)
        if candidates.size == 0:
            break
        if pivots >= max_pivots:
            raise Stalled(f"simplex exceeded {max_pivots} pivots")

        bland = streak >= DEGENERATE_STREAK
        q = candidates[0] if bland else candidates[np.argmin(d[candidates])]

        col = Binv @ A[:, q]
        pos = np.flatnonzero(col > PIVOT_TOL * max(1.0, np.abs(col).max()))
        if pos.size == 0:
            if since_refresh:
                Binv, xB = refactor()
                since_refresh = 0
                continue
            if not unbounded_ok:
                raise RuntimeError("linear program is unbounded")
            # objective bounded below: the negative reduced cost is rounding
            skip[q] = True
            continue
        if bland:
            ratios = xB[pos] / col[pos]
            ties = pos[ratios <= ratios.min() + 1e-12 * (1.0 + ratios.min())]
            p = ties[np.argmin(basis[ties])]
        else:
            # Harris: widen the bound by the feasibility tolerance, then take
            # the largest pivot among the rows that still fit under it
            bound = ((xB[pos] + feas_tol) / col[pos]).min()
            ok = pos[xB[pos] / col[pos] <= bound]
            p = ok[np.argmax(col[ok])]

        step = max(xB[p], 0.0) / col[p]
        streak = streak + 1 if step <= 1e-14 * (1.0 + np.abs(xB).max()) else 0

        xB = xB - step * col
        xB[p] = step
        xB[xB < 0] = 0.0

        piv_row = Binv[p] / col[p]
        Binv -= np.outer(col, piv_row)
        Binv[p] = piv_row

        in_basis[basis[p]] = False
        in_basis[q] = True
        basis[p] = q
        skip[:] = False
        pivots += 1
        since_refresh += 1
        if since_refresh >= refresh:
            Binv, xB = refactor()
            since_refresh = 0

    x = np.zeros(n)
    x[basis] = xB
    return LPResult(x=x, objective=float(c @ x), duals=y, basis=basis, pivots=pivots)


def _long_step(ratios, col, dq):
    """Number of leading kinks the entering column may run past.

    ``ratios`` and ``col`` describe the blocking unit rows in ratio order. A
    unit variable reaching zero can swap to its partner column (``s_i`` for
    ``t_i``) at no cost, and each swap raises the entering reduced cost by
    ``2 col_i``; swapping continues while that cost stays negative. At least
    one row is always left to block.
    """
    slopes = dq + 2.0 * np.cumsum(col)
    return min(int(np.searchsorted(slopes >= 0, True)), ratios.size - 1)


def l1_simplex(W, rhs, max_pivots=None, tol=1e-11):
    """Primal simplex for ``min 1^T (s + t)  s.t.  W z - s + t = rhs``.

    ``z`` is free and ``s, t >= 0``. A basis holds some columns ``V`` of
    ``W`` (which never leave once in) and one unit column ``-e_i`` (``s_i``)
    or ``e_i`` (``t_i``) on every other row. With ``Z`` the rows not covered
    by unit columns, ``B x = v`` reduces to ``V_Z x_V = v_Z`` plus a
    substitution, so a pivot costs ``O(N r)``. The start basis is ``z = 0``.
    Ratio test is Harris's after the long step of :func:`_long_step`; a run
    of pivots without progress switches to Bland's rule without long steps.

    Returns an :class:`LPResult` whose ``x`` is ``(z, s, t)``.
    """
    W = np.asarray(W, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    N, r = W.shape
    if max_pivots is None:
        max_pivots = 50 * (2 * N + r)
    feas_tol = 1e-9 * (1.0 + np.abs(rhs).max(initial=0.0))
    col_norm = np.concatenate([np.abs(W).sum(axis=0), np.ones(2 * N)])

    # +1: t_i basic, -1: s_i basic, 0: row solved through the W block
    cover = np.where(rhs >= 0, 1, -1)
    zcol = []
    pivots = streak = 0
    best_obj = np.inf
    skip = np.zeros(r + 2 * N, dtype=bool)

    def solve(Z, V, v):
        if not zcol:
            return np.zeros(0), cover * v
        xV = np.linalg.solve(V[Z], v[Z])
        return xV, cover * (v - V @ xV)

    while True:
        Z = np.flatnonzero(cover == 0)
        V = W[:, zcol]
        xV, xU = solve(Z, V, rhs)
        y = cover.astype(float)
        if zcol:
            y[Z] = -np.linalg.solve(V[Z].T, V.T @ y)
        # W columns may move either way, so their reduced cost is -|W_j^T y|
        g = W.T @ y
        d = np.concatenate([-np.abs(g), 1.0 + y, 1.0 - y])
        covered = np.flatnonzero(cover != 0)
        unit_ids = r + np.where(cover[covered] < 0, covered, N + covered)
        if xU[covered].sum() <= feas_tol:
            # exact fit: optimal, and y = 0 certifies it
            y = np.zeros(N)
            break
        d[zcol] = 0.0
        d[unit_ids] = 0.0
        dtol = tol * (1.0 + col_norm * max(1.0, np.abs(y).max(initial=0.0)))
        candidates = np.flatnonzero((d < -dtol) & ~skip)
        if candidates.size == 0:
            break
        if pivots >= max_pivots:
            raise Stalled(f"simplex exceeded {max_pivots} pivots")
        bland = streak >= DEGENERATE_STREAK
        q = candidates[0] if bland else candidates[np.argmin(d[candidates])]

        if q < r:
            a = W[:, q] * np.sign(g[q])
        else:
            a = np.zeros(N)
            a[(q - r) % N] = -1.0 if q < r + N else 1.0
        _, cU = solve(Z, V, a)
        xB = np.maximum(xU[covered], 0.0)
        col = cU[covered]
        pos = np.flatnonzero(col > PIVOT_TOL * max(1.0, np.abs(col).max(initial=0.0)))
        if pos.size == 0:
            # the objective is bounded below, so this is rounding in d
            skip[q] = True
            continue
        ratios = xB[pos] / col[pos]
        if bland:
            ties = pos[ratios <= ratios.min() + 1e-12 * (1.0 + ratios.min())]
            p = ties[np.argmin(unit_ids[ties])]
        else:
            order = np.argsort(ratios, kind="stable")
            n_flip = _long_step(ratios[order], col[pos[order]], d[q])
            flipped = covered[pos[order[:n_flip]]]
            pos = pos[order[n_flip:]]
            bound = ((xB[pos] + feas_tol) / col[pos]).min()
            ok = pos[xB[pos] / col[pos] <= bound]
            p = ok[np.argmax(col[ok])]
            cover[flipped] = -cover[flipped]
        step = xB[p] / col[p]
        obj = xB.sum()
        stuck = step <= 1e-14 * (1.0 + xB.max(initial=0.0)) or obj >= best_obj
        streak = streak + 1 if stuck else 0
        best_obj = min(best_obj, obj)

        cover[covered[p]] = 0
        if q < r:
            zcol.append(int(q))
        else:
            cover[(q - r) % N] = -1 if q < r + N else 1
        skip[:] = False
        pivots += 1

    x = np.zeros(r + 2 * N)
    x[zcol] = xV
    x[unit_ids] = np.maximum(xU[covered], 0.0)
    return LPResult(x=x, objective=float(x[r:].sum()), duals=y,
                    basis=np.concatenate([zcol, unit_ids]).astype(int), pivots=pivots)
