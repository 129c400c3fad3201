"""Two non-convex objectives with a concave Pareto front, as optimizer providers.

``l1(theta) = 1 - exp(-|theta - c|^2)`` and ``l2(theta) = 1 - exp(-|theta + c|^2)``
with ``c = 1/sqrt(n) * ones(n)``. Their Pareto set is the segment between
``-c`` and ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fedsim import ObjectiveBundle

EPSILON_SWEEP = (0.2, 0.4, 0.6, 0.8)
ORACLE_POINTS = 1_000_001


def center(n: int) -> np.ndarray:
    return np.full(n, 1.0 / math.sqrt(n))


def objectives(theta):
    """Return ``(l1, l2, grad_l1, grad_l2)``."""
    theta = np.asarray(theta, dtype=float).ravel()
    c = center(theta.size)
    u, v = theta - c, theta + c
    e1, e2 = math.exp(-float(u @ u)), math.exp(-float(v @ v))
    return 1.0 - e1, 1.0 - e2, 2.0 * e1 * u, 2.0 * e2 * v


def constrained_optimum_oracle(epsilon: float, points: int = ORACLE_POINTS):
    """Grid search for ``min l1 s.t. l2 <= epsilon`` on the segment ``theta = t c``.

    Returns ``(t_star, l1_star)``.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    t = np.linspace(-1.0, 1.0, points)
    l1 = 1.0 - np.exp(-((t - 1.0) ** 2))
    l2 = 1.0 - np.exp(-((t + 1.0) ** 2))
    feasible = l2 <= epsilon
    if not feasible.any():
        raise ValueError(f"no feasible grid point for epsilon={epsilon}")
    idx = np.flatnonzero(feasible)[np.argmin(l1[feasible])]
    return float(t[idx]), float(l1[idx])


@dataclass
class SyntheticProblem:
    n: int = 20
    epsilon: float = 0.2
    theta0: np.ndarray | None = None
    feasible_init: bool = False
    noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be at least 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.theta0 is None:
            rng = np.random.default_rng(self.seed)
            base = -center(self.n) if self.feasible_init else center(self.n)
            self.theta0 = base + self.noise * rng.standard_normal(self.n)
        self.theta0 = np.asarray(self.theta0, dtype=float).ravel()
        if self.theta0.size != self.n:
            raise ValueError("theta0 has the wrong dimension")


def _bundle(losses, loss_grads, disparities, disparity_grads, budgets):
    losses = np.asarray(losses, dtype=float)
    disparities = np.asarray(disparities, dtype=float)
    return ObjectiveBundle(
        losses=losses,
        loss_grads=np.atleast_2d(loss_grads),
        disparities=disparities,
        disparity_grads=np.atleast_2d(disparity_grads),
        slacks=disparities - budgets,
        hard_disparities=disparities.copy(),
    )


@dataclass
class SyntheticConstrainedProvider:
    """One "client" with utility loss l1 and "disparity" l2 under budget epsilon."""

    problem: SyntheticProblem
    budgets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.budgets = np.array([self.problem.epsilon])

    num_clients = 1
    client_ids = ["0"]

    @property
    def dim(self) -> int:
        return self.problem.n

    def initial_theta(self) -> np.ndarray:
        return self.problem.theta0.copy()

    def client_weights(self) -> np.ndarray:
        return np.ones(1)

    def evaluate(self, theta) -> ObjectiveBundle:
        l1, l2, g1, g2 = objectives(theta)
        return _bundle([l1], g1, [l2], g2, self.budgets)

    def client_metrics(self, theta) -> list:
        l1, l2, _, _ = objectives(theta)
        return [{"client_id": "0", "loss": l1, "l1": l1, "l2": l2, "soft_disparity": l2, "hard_disparity": l2}]


@dataclass
class SyntheticPairProvider:
    """Both objectives as two clients' losses with vacuous fairness constraints."""

    n: int = 20
    theta0: np.ndarray | None = None
    weights: tuple = (0.5, 0.5)
    noise: float = 0.01
    seed: int = 0
    budgets: np.ndarray = field(default_factory=lambda: np.ones(2))

    num_clients = 2
    client_ids = ["0", "1"]

    def __post_init__(self):
        if self.theta0 is None:
            rng = np.random.default_rng(self.seed)
            self.theta0 = self.noise * rng.standard_normal(self.n)
        self.theta0 = np.asarray(self.theta0, dtype=float).ravel()

    @property
    def dim(self) -> int:
        return self.n

    def initial_theta(self) -> np.ndarray:
        return self.theta0.copy()

    def client_weights(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum() if w.sum() > 0 else w

    def evaluate(self, theta) -> ObjectiveBundle:
        l1, l2, g1, g2 = objectives(theta)
        zeros = np.zeros((2, np.asarray(theta).size))
        return _bundle([l1, l2], np.vstack([g1, g2]), [0.0, 0.0], zeros, self.budgets)

    def client_metrics(self, theta) -> list:
        l1, l2, _, _ = objectives(theta)
        return [
            {"client_id": "0", "loss": l1, "soft_disparity": 0.0, "hard_disparity": 0.0},
            {"client_id": "1", "loss": l2, "soft_disparity": 0.0, "hard_disparity": 0.0},
        ]


def as_problem(sp: SyntheticProblem) -> SyntheticConstrainedProvider:
    return SyntheticConstrainedProvider(sp)
