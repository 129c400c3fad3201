"""Direction search restricted to the convex hull of gradients.

Every builder returns hull weights ``alpha`` on the probability simplex and
the combined vector ``d = alpha @ G``. The optimizer applies the step
``theta <- theta - eta * d``, so "non-increase of f along the step" is the
row ``<d, grad f> >= lower`` (``lower = 0`` for the plain condition).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .simplex import LPResult, solve_lp

ZERO_GRAD = 1e-12

OPTIMAL = "optimal"
RELAXED = "constraint_relaxed"
DEGENERATE = "degenerate"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class GradientHull:
    gradients: np.ndarray  # (k, n); rows are hull members
    labels: tuple = ()

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gradients, dtype=float))
        if g.shape[0] == 0:
            raise ValueError("gradient hull must be nonempty")
        if not np.all(np.isfinite(g)):
            raise ValueError("gradient hull contains non-finite entries")
        labels = tuple(self.labels) or tuple(f"g{i}" for i in range(g.shape[0]))
        if len(labels) != g.shape[0]:
            raise ValueError("one label per hull member")
        object.__setattr__(self, "gradients", g)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.gradients.shape[0]

    @property
    def dim(self) -> int:
        return self.gradients.shape[1]

    def combine(self, alpha) -> np.ndarray:
        return np.asarray(alpha, dtype=float) @ self.gradients


@dataclass(frozen=True)
class Constraint:
    """Require ``<d, vector> >= lower`` for the combined direction ``d``."""

    vector: np.ndarray
    lower: float = 0.0
    label: str = ""


@dataclass(frozen=True)
class DirectionProblem:
    """Minimise ``<d, objective>`` over ``d`` in the hull subject to ``constraints``."""

    hull: GradientHull
    objective: np.ndarray
    constraints: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.objective, dtype=float).ravel()
        if v.shape[0] != self.hull.dim:
            raise ValueError("objective vector dimension differs from the hull")
        cons = tuple(self.constraints)
        for con in cons:
            if np.asarray(con.vector).ravel().shape[0] != self.hull.dim:
                raise ValueError(f"constraint {con.label!r} dimension differs from the hull")
        object.__setattr__(self, "objective", v)
        object.__setattr__(self, "constraints", cons)


@dataclass(frozen=True)
class ReducedLP:
    c: np.ndarray  # c_i = <g_i, v>
    rows: np.ndarray  # r_ji = <g_i, w_j>
    lower: np.ndarray

    def solve(self) -> LPResult:
        # <d, w_j> >= lower_j  <=>  -rows @ alpha <= -lower
        if self.rows.shape[0] == 0:
            return solve_lp(self.c)
        return solve_lp(self.c, -self.rows, -self.lower)


@dataclass(frozen=True)
class DirectionSolution:
    alpha: np.ndarray
    combined: np.ndarray
    status: str = OPTIMAL
    objective: float = 0.0
    dropped: tuple = ()
    applied_step: np.ndarray | None = field(default=None, compare=False)

    @property
    def sq_norm(self) -> float:
        return float(self.combined @ self.combined)

    def with_step(self, eta: float) -> "DirectionSolution":
        return replace(self, applied_step=-eta * self.combined)


def reduce(problem: DirectionProblem) -> ReducedLP:
    """Project the n-dimensional problem onto the hull weights."""
    G = problem.hull.gradients
    c = G @ problem.objective
    if problem.constraints:
        W = np.vstack([np.asarray(con.vector, dtype=float).ravel() for con in problem.constraints])
        rows = W @ G.T
        lower = np.array([float(con.lower) for con in problem.constraints])
    else:
        rows = np.zeros((0, G.shape[0]))
        lower = np.zeros(0)
    return ReducedLP(c, rows, lower)


def _degenerate(hull: GradientHull) -> DirectionSolution:
    alpha = np.zeros(hull.size)
    alpha[0] = 1.0
    return DirectionSolution(alpha, np.zeros(hull.dim), DEGENERATE, 0.0)


def _is_degenerate(hull: GradientHull) -> bool:
    return bool(np.all(np.linalg.norm(hull.gradients, axis=1) <= ZERO_GRAD))


def solve_direction(problem: DirectionProblem, relax_order=None) -> DirectionSolution:
    """Solve the hull LP; on infeasibility drop constraints in ``relax_order``.

    ``relax_order`` lists constraint indices in the order they may be dropped.
    Constraints not listed are never dropped; if those alone are infeasible
    the result is a zero direction with status ``infeasible``.
    """
    hull = problem.hull
    if _is_degenerate(hull):
        return _degenerate(hull)
    active = list(range(len(problem.constraints)))
    dropped = []
    order = list(relax_order or [])
    while True:
        sub = replace(problem, constraints=tuple(problem.constraints[i] for i in active))
        res = reduce(sub).solve()
        if res.status == OPTIMAL:
            status = RELAXED if dropped else OPTIMAL
            return DirectionSolution(
                res.alpha, hull.combine(res.alpha), status, res.objective, tuple(dropped)
            )
        if not order:
            # only protected rows remain and they cannot hold anywhere in the hull
            alpha = np.zeros(hull.size)
            alpha[0] = 1.0
            return DirectionSolution(alpha, np.zeros(hull.dim), INFEASIBLE, 0.0, tuple(dropped))
        j = order.pop(0)
        active.remove(j)
        dropped.append(problem.constraints[j].label or j)


def stage1_feasible_direction(
    smf_loss_grad, smf_slack_grad, slack=None, eta=None, boundary_fraction=0.5
) -> DirectionSolution:
    """Steepest descent of the smoothed loss within the hull of the two smoothed gradients.

    When ``slack`` (the current smoothed slack, <= 0) and ``eta`` are given,
    the step may consume at most ``boundary_fraction`` of the remaining
    margin to the constraint boundary, to first order.
    """
    g_l = np.asarray(smf_loss_grad, dtype=float).ravel()
    g_s = np.asarray(smf_slack_grad, dtype=float).ravel()
    hull = GradientHull(np.vstack([g_l, g_s]), ("smf_loss", "smf_slack"))
    cons = ()
    if slack is not None and eta is not None:
        lower = boundary_fraction * min(float(slack), 0.0) / eta
        cons = (Constraint(g_s, lower, "smf_slack"),)
    return solve_direction(DirectionProblem(hull, -g_l, cons))


def stage1_infeasible_direction(smf_loss_grad, smf_slack_grad, min_progress=0.1) -> DirectionSolution:
    """Steepest descent of the smoothed slack without ascent of the smoothed loss.

    The loss row counts as infeasible when, with it in place, the attainable
    slack descent rate falls below ``min_progress`` times the rate attainable
    without it; it is then dropped (status ``constraint_relaxed``).
    """
    g_l = np.asarray(smf_loss_grad, dtype=float).ravel()
    g_s = np.asarray(smf_slack_grad, dtype=float).ravel()
    hull = GradientHull(np.vstack([g_l, g_s]), ("smf_loss", "smf_slack"))
    if _is_degenerate(hull):
        return _degenerate(hull)
    best_free = float(np.max(hull.gradients @ g_s))
    floor = min_progress * best_free
    cons = (
        Constraint(g_l, 0.0, "smf_loss"),
        Constraint(g_s, floor, "slack_progress"),
    )
    sol = solve_direction(DirectionProblem(hull, -g_s, cons), relax_order=[0])
    if sol.status == RELAXED:
        sol = replace(sol, dropped=("smf_loss",))
    return sol


def stage2_direction(
    loss_grads,
    disparity_grads,
    smf_slack_grad,
    loss_nonincrease_mode: str = "per_client",
    smf_loss_grad=None,
    slack_lower: float = 0.0,
) -> DirectionSolution:
    """Constrained linear scalarisation over the hull of all client loss and disparity gradients."""
    L = np.atleast_2d(np.asarray(loss_grads, dtype=float))
    D = np.atleast_2d(np.asarray(disparity_grads, dtype=float))
    N = L.shape[0]
    if N < 1:
        raise ValueError("stage-2 direction needs at least one client")
    g_s = np.asarray(smf_slack_grad, dtype=float).ravel()
    labels = tuple(f"loss_{i}" for i in range(N)) + tuple(f"disparity_{i}" for i in range(D.shape[0]))
    hull = GradientHull(np.vstack([L, D]), labels)
    cons = []
    if loss_nonincrease_mode == "per_client":
        cons += [Constraint(L[i], 0.0, f"loss_{i}") for i in range(N)]
    elif loss_nonincrease_mode == "smf_only":
        if smf_loss_grad is None:
            raise ValueError("smf_only mode needs the smoothed loss gradient")
        cons.append(Constraint(np.asarray(smf_loss_grad, dtype=float).ravel(), 0.0, "smf_loss"))
    else:
        raise ValueError(f"unknown loss_nonincrease_mode {loss_nonincrease_mode!r}")
    n_loss_rows = len(cons)
    cons.append(Constraint(g_s, min(float(slack_lower), 0.0), "smf_slack"))
    # drop loss rows last-added first; the slack row is never dropped
    order = list(range(n_loss_rows - 1, -1, -1))
    return solve_direction(DirectionProblem(hull, -L.mean(axis=0), tuple(cons)), relax_order=order)
