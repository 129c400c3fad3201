"""Dense two-phase simplex for small LPs over the probability simplex.

Solves::

    min  c @ alpha
    s.t. A_ub @ alpha <= b_ub
         sum(alpha) == 1, alpha >= 0

Problems here have a handful of variables (the hull size), so a plain
tableau with Bland's rule is both exact enough and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9
MAX_PIVOTS = 10_000


@dataclass(frozen=True)
class LPResult:
    alpha: np.ndarray | None
    objective: float
    status: str  # "optimal" | "infeasible"


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    nz = np.nonzero(col)[0]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])
    T[:, c] = 0.0
    T[r, c] = 1.0


def _run_simplex(T: np.ndarray, basis: list[int], allowed: int) -> None:
    """Bland's-rule iterations on tableau ``T`` (objective in the last row).

    Only columns ``< allowed`` may enter the basis.
    """
    for _ in range(MAX_PIVOTS):
        reduced = T[-1, :allowed]
        candidates = np.nonzero(reduced < -PIVOT_TOL)[0]
        if candidates.size == 0:
            return
        col = int(candidates[0])
        column = T[:-1, col]
        rows = np.nonzero(column > PIVOT_TOL)[0]
        if rows.size == 0:
            # cannot happen on a bounded feasible region such as the simplex
            raise RuntimeError("LP unbounded")
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, row, col)
        basis[row] = col
    raise RuntimeError("simplex exceeded the pivot limit")


def _normalise_rows(A: np.ndarray, b: np.ndarray):
    scale = np.max(np.abs(np.hstack([A, b[:, None]])), axis=1)
    scale[scale == 0] = 1.0
    return A / scale[:, None], b / scale


def solve_lp(c, A_ub=None, b_ub=None) -> LPResult:
    """Minimise ``c @ alpha`` over the simplex intersected with ``A_ub @ alpha <= b_ub``."""
    c = np.asarray(c, dtype=float).ravel()
    m = c.size
    if m < 1:
        raise ValueError("LP needs at least one variable")
    if A_ub is None:
        A_ub = np.zeros((0, m))
        b_ub = np.zeros(0)
    A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float)).reshape(-1, m)
    b_ub = np.zeros(A_ub.shape[0]) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    if b_ub.shape[0] != A_ub.shape[0]:
        raise ValueError("A_ub and b_ub disagree on the number of rows")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A_ub)) and np.all(np.isfinite(b_ub))):
        raise ValueError("LP data must be finite")

    k = A_ub.shape[0]
    A_ub, b_ub = _normalise_rows(A_ub, b_ub)
    cscale = np.max(np.abs(c))
    c_scaled = c / cscale if cscale > 0 else c

    # columns: alpha (m) | slacks (k) | artificials | rhs
    flip = b_ub < 0
    art_rows = [0] + [1 + j for j in range(k) if flip[j]]
    n_art = len(art_rows)
    n_cols = m + k + n_art
    T = np.zeros((k + 2, n_cols + 1))
    T[0, :m] = 1.0
    T[0, -1] = 1.0
    for j in range(k):
        sign = -1.0 if flip[j] else 1.0
        T[1 + j, :m] = sign * A_ub[j]
        T[1 + j, m + j] = sign
        T[1 + j, -1] = sign * b_ub[j]
    basis = [0] * (k + 1)
    for a, r in enumerate(art_rows):
        T[r, m + k + a] = 1.0
        basis[r] = m + k + a
    for j in range(k):
        if not flip[j]:
            basis[1 + j] = m + j

    # phase 1: minimise the sum of artificials
    T[-1, :] = 0.0
    for r in art_rows:
        T[-1] -= T[r]
    T[-1, m + k:n_cols] = 0.0
    _run_simplex(T, basis, m + k)
    if -T[-1, -1] > FEAS_TOL:
        return LPResult(None, float("nan"), "infeasible")

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(k + 1):
        if basis[r] >= m + k:
            cols = np.nonzero(np.abs(T[r, : m + k]) > PIVOT_TOL)[0]
            if cols.size == 0:
                continue
            _pivot(T, r, int(cols[0]))
            basis[r] = int(cols[0])
        keep.append(r)
    T = np.vstack([T[keep], T[-1:]])
    T = np.delete(T, np.s_[m + k:n_cols], axis=1)
    basis = [basis[r] for r in keep]

    # phase 2
    cost = np.zeros(m + k)
    cost[:m] = c_scaled
    T[-1, :] = 0.0
    T[-1, : m + k] = cost
    for r, bvar in enumerate(basis):
        if cost[bvar] != 0.0:
            T[-1] -= cost[bvar] * T[r]
    _run_simplex(T, basis, m + k)

    x = np.zeros(m + k)
    for r, bvar in enumerate(basis):
        x[bvar] = T[r, -1]
    alpha = np.clip(x[:m], 0.0, None)
    alpha /= alpha.sum()
    return LPResult(alpha, float(c @ alpha), "optimal")
