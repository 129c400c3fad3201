"""Two-stage fairness-constrained min-max / Pareto optimizer and the scalarised baseline.

Stage 1 minimises the smoothed worst client loss subject to the smoothed
worst fairness slack staying non-positive. Each round picks one of two
hull LPs depending on the sign of the smoothed slack, steps against the
combined direction and, once the direction vanishes, shrinks the
smoothing temperatures.

Stage 2 starts from the stage-1 model, snapshots every client loss, and
lowers the mean client loss without letting any client rise above its
snapshot or the fairness slack turn positive.

Any object with ``num_clients``, ``dim``, ``budgets``, ``client_ids``,
``initial_theta()``, ``client_weights()``, ``evaluate(theta)`` and
``client_metrics(theta)`` can be optimized; see :mod:`fcfl.fedsim` and
:mod:`fcfl.synthetic`.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .direction import DEGENERATE, INFEASIBLE, stage1_feasible_direction, stage1_infeasible_direction, stage2_direction
from .smf import SmoothingState, at_floor, decay, smf_value, smf_with_grad

log = logging.getLogger(__name__)

MINMAX, PARETO, DONE = "minmax", "pareto", "done"


@dataclass
class OptimizerConfig:
    eta: float = 0.05
    max_iters_stage1: int = 2000
    max_iters_stage2: int = 1000
    smoothing: SmoothingState = field(default_factory=SmoothingState)
    convergence_tol: float = 1e-6
    loss_nonincrease_mode: str = "per_client"
    mode: str = "fcfl"
    fairreg_weight: float = 0.0
    seed: int = 0
    # fraction of the remaining distance to the slack boundary one step may use
    boundary_fraction: float = 0.5
    # infeasible branch drops the loss row below this share of attainable slack descent
    min_progress: float = 0.1
    # feasible-branch steps may leave the smoothed slack at most this far above zero
    feasibility_tol: float = 1e-9
    max_backtracks: int = 20
    stage2_loss_tol: float = 1e-6
    # stage 2 stops once the mean loss can no longer fall faster than this rate
    stage2_rate_tol: float = 1e-10
    max_iters_baseline: int = 2000
    baseline_weights: tuple | None = None

    def __post_init__(self):
        if isinstance(self.smoothing, dict):
            self.smoothing = SmoothingState(**self.smoothing)
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not (self.convergence_tol > 0 and self.stage2_loss_tol >= 0):
            raise ValueError("tolerances must be positive")
        if self.loss_nonincrease_mode not in ("per_client", "smf_only"):
            raise ValueError(f"unknown loss_nonincrease_mode {self.loss_nonincrease_mode!r}")
        if self.mode not in ("fcfl", "fedave_fairreg"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.fairreg_weight < 0:
            raise ValueError("fairreg_weight must be non-negative")
        if not 0 < self.boundary_fraction <= 1:
            raise ValueError("boundary_fraction must lie in (0, 1]")
        if not 0 <= self.min_progress < 1:
            raise ValueError("min_progress must lie in [0, 1)")
        for name in ("max_iters_stage1", "max_iters_stage2", "max_backtracks", "max_iters_baseline"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.baseline_weights is not None:
            self.baseline_weights = tuple(float(w) for w in self.baseline_weights)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["baseline_weights"] = None if self.baseline_weights is None else list(self.baseline_weights)
        return out


@dataclass
class OptimizerState:
    theta: np.ndarray
    bundle: object
    smoothing: SmoothingState
    stage: str = MINMAX
    iter: int = 0
    stage_iter: int = 0
    history: list = field(default_factory=list)
    stage1_losses: np.ndarray | None = None
    transition_iter: int | None = None
    last_sq_norm: float = float("inf")
    flags: dict = field(
        default_factory=lambda: {
            "mcf_violated": False,
            "budget_exhausted": False,
            "pareto_stationary": False,
            "stage2_backtrack_exhausted": False,
        }
    )

    def enter_pareto(self) -> None:
        if self.stage != MINMAX or self.stage1_losses is not None:
            raise RuntimeError("stage transitions are minmax -> pareto -> done, once")
        self.stage1_losses = self.bundle.losses.copy()
        self.transition_iter = self.iter
        self.stage = PARETO
        self.stage_iter = 0

    def finish(self) -> None:
        if self.stage == DONE:
            raise RuntimeError("optimizer already finished")
        self.stage = DONE


@dataclass
class RunReport:
    mode: str
    clients: list
    flags: dict
    transition_iter: int | None
    iterations: int
    theta: list
    trajectory: list
    config: dict = field(default_factory=dict)
    seed: int = 0
    code_version: str = __version__
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "trajectory"}
        out["record"] = "summary"
        return out

    def losses(self) -> np.ndarray:
        return np.array([c["loss"] for c in self.clients])


def _record(state: OptimizerState, branch, status, sq_norm, eta_used, smf_loss, smf_slack) -> dict:
    b = state.bundle
    return {
        "record": "iteration",
        "iter": state.iter,
        "stage": state.stage,
        "branch": branch,
        "status": status,
        "losses": b.losses.tolist(),
        "soft_disparities": b.disparities.tolist(),
        "hard_disparities": b.hard_disparities.tolist(),
        "slacks": b.slacks.tolist(),
        "smf_loss": smf_loss,
        "smf_slack": smf_slack,
        "dir_sq_norm": sq_norm,
        "eta": eta_used,
        "delta_l": state.smoothing.delta_l,
        "delta_g": state.smoothing.delta_g,
    }


def _backtrack(problem, theta, direction, eta, max_halvings, accept):
    """Halve the step until ``accept(bundle)`` holds; returns (eta_used, theta, bundle)."""
    step = eta
    for _ in range(max_halvings + 1):
        trial = theta - step * direction
        bundle = problem.evaluate(trial)
        if accept(bundle):
            return step, trial, bundle
        step *= 0.5
    return 0.0, theta, None


def init_fair(problem) -> np.ndarray:
    """A parameter vector whose predictions ignore every feature."""
    return problem.initial_theta()


def step_stage1(state: OptimizerState, bundle, problem, config: OptimizerConfig) -> OptimizerState:
    """One constrained min-max round; returns the updated state."""
    if state.stage != MINMAX:
        raise RuntimeError("step_stage1 called outside the min-max stage")
    sm = state.smoothing
    l_hat, g_l = smf_with_grad(bundle.losses, bundle.loss_grads, sm.delta_l)
    s_hat, g_s = smf_with_grad(bundle.slacks, bundle.disparity_grads, sm.delta_g)

    if s_hat <= 0:
        branch = "feasible"
        sol = stage1_feasible_direction(g_l, g_s, s_hat, config.eta, config.boundary_fraction)

        eta = config.eta

        def accept(b):
            return (
                smf_value(b.losses, sm.delta_l) <= l_hat
                and smf_value(b.slacks, sm.delta_g) <= config.feasibility_tol
            )

    else:
        branch = "infeasible"
        sol = stage1_infeasible_direction(g_l, g_s, config.min_progress)
        # aim the linearised slack at -s_hat instead of overshooting deep inside
        rate = float(sol.combined @ g_s)
        eta = min(config.eta, 2.0 * s_hat / rate) if rate > 0 else config.eta

        def accept(b):
            return smf_value(b.slacks, sm.delta_g) < s_hat

    d = sol.combined
    status = sol.status
    if sol.status in (DEGENERATE, INFEASIBLE) or not np.any(d):
        eta_used, theta, new_bundle = 0.0, state.theta, bundle
    else:
        eta_used, theta, new_bundle = _backtrack(problem, state.theta, d, eta, config.max_backtracks, accept)
        if new_bundle is None:
            new_bundle = bundle
            status = "stalled"
    state.bundle = bundle
    state.history.append(_record(state, branch, status, sol.sq_norm, eta_used, l_hat, s_hat))
    state.theta = theta
    state.bundle = new_bundle
    # a round without an acceptable step counts as a vanished direction
    moved_sq = sol.sq_norm if eta_used > 0 else 0.0
    state.last_sq_norm = moved_sq
    state.smoothing = decay(sm, moved_sq)
    state.iter += 1
    state.stage_iter += 1
    return state


def stage1_converged(state: OptimizerState, config: OptimizerConfig) -> bool:
    """Stop rule for stage 1; sets ``budget_exhausted`` / ``mcf_violated`` when the budget runs out."""
    s_hat = smf_value(state.bundle.slacks, state.smoothing.delta_g)
    if (
        state.last_sq_norm <= state.smoothing.eps_d
        and at_floor(state.smoothing)
        and s_hat <= config.convergence_tol
    ):
        return True
    if state.stage_iter >= config.max_iters_stage1:
        state.flags["budget_exhausted"] = True
        if s_hat > config.convergence_tol:
            state.flags["mcf_violated"] = True
        return True
    return False


def step_stage2(state: OptimizerState, bundle, problem, config: OptimizerConfig) -> OptimizerState:
    """One constrained Pareto round. Moves the state to ``done`` when no acceptable step exists."""
    if state.stage != PARETO or state.stage1_losses is None:
        raise RuntimeError("step_stage2 needs the pareto stage and a stage-1 snapshot")
    sm = state.smoothing
    s_hat, g_s = smf_with_grad(bundle.slacks, bundle.disparity_grads, sm.delta_g)
    l_hat, g_l = smf_with_grad(bundle.losses, bundle.loss_grads, sm.delta_l)
    sol = stage2_direction(
        bundle.loss_grads,
        bundle.disparity_grads,
        g_s,
        config.loss_nonincrease_mode,
        smf_loss_grad=g_l,
        slack_lower=config.boundary_fraction * min(s_hat, 0.0) / config.eta,
    )
    d = sol.combined
    state.bundle = bundle
    # predicted first-order decrease rate of the mean client loss
    rate = float(d @ bundle.loss_grads.mean(axis=0))
    if sol.status in (DEGENERATE, INFEASIBLE) or rate <= config.stage2_rate_tol:
        state.history.append(_record(state, "pareto", sol.status, sol.sq_norm, 0.0, l_hat, s_hat))
        state.flags["pareto_stationary"] = True
        state.iter += 1
        state.stage_iter += 1
        state.finish()
        return state

    snapshot = state.stage1_losses
    mean_now = float(bundle.losses.mean())
    slack_cap = max(s_hat, 0.0)
    snap_hat = smf_value(snapshot, sm.delta_l)

    def accept(b):
        if config.loss_nonincrease_mode == "per_client":
            if np.any(b.losses > snapshot + config.stage2_loss_tol):
                return False
        elif smf_value(b.losses, sm.delta_l) > snap_hat + config.stage2_loss_tol:
            return False
        return float(b.losses.mean()) < mean_now and smf_value(b.slacks, sm.delta_g) <= slack_cap

    eta_used, theta, new_bundle = _backtrack(problem, state.theta, d, config.eta, config.max_backtracks, accept)
    state.history.append(_record(state, "pareto", sol.status, sol.sq_norm, eta_used, l_hat, s_hat))
    state.last_sq_norm = sol.sq_norm
    state.iter += 1
    state.stage_iter += 1
    if new_bundle is None:
        # no acceptable step at any tried length: stationary within tolerance
        state.flags["stage2_backtrack_exhausted"] = True
        state.flags["pareto_stationary"] = True
        state.finish()
        return state
    state.theta = theta
    state.bundle = new_bundle
    return state


def _final_report(state, problem, config, mode, extra=None) -> RunReport:
    sm = state.smoothing
    b = state.bundle
    state.history.append(
        _record(state, None, "final", 0.0, 0.0, smf_value(b.losses, sm.delta_l), smf_value(b.slacks, sm.delta_g))
    )
    state.flags["mcf_violated"] = bool(np.max(b.slacks) > config.convergence_tol)
    return RunReport(
        mode=mode,
        clients=problem.client_metrics(state.theta),
        flags=dict(state.flags),
        transition_iter=state.transition_iter,
        iterations=state.iter,
        theta=state.theta.tolist(),
        trajectory=state.history,
        config=config.to_dict(),
        seed=config.seed,
        extra=extra or {},
    )


def run(problem, config: OptimizerConfig) -> RunReport:
    """Full two-stage optimization from the feature-blind initial model."""
    if config.mode == "fedave_fairreg":
        return run_baseline_fedave_fairreg(problem, config)
    theta = np.asarray(init_fair(problem), dtype=float)
    bundle = problem.evaluate(theta)
    sm = config.smoothing
    s0 = smf_value(bundle.slacks, sm.delta_g)
    if s0 > 0:
        log.warning(
            "initial model violates the smoothed fairness constraint (slack %.3g, budgets %s, delta_g=%g)",
            s0,
            problem.budgets,
            sm.delta_g,
        )
    state = OptimizerState(theta=theta, bundle=bundle, smoothing=sm)

    while not stage1_converged(state, config):
        step_stage1(state, state.bundle, problem, config)
    s_transition = smf_value(state.bundle.slacks, state.smoothing.delta_g)
    state.enter_pareto()
    while state.stage == PARETO:
        if state.stage_iter >= config.max_iters_stage2:
            state.finish()
            break
        step_stage2(state, state.bundle, problem, config)
    extra = {
        "stage1_losses": state.stage1_losses.tolist(),
        "smf_slack_at_transition": s_transition,
    }
    return _final_report(state, problem, config, "fcfl", extra)


def run_baseline_fedave_fairreg(problem, config: OptimizerConfig) -> RunReport:
    """Gradient descent on the weighted client losses plus a disparity penalty."""
    weights = (
        np.asarray(config.baseline_weights, dtype=float)
        if config.baseline_weights is not None
        else problem.client_weights()
    )
    if weights.shape[0] != problem.num_clients:
        raise ValueError(f"{weights.shape[0]} baseline weights for {problem.num_clients} clients")
    theta = np.asarray(init_fair(problem), dtype=float)
    state = OptimizerState(theta=theta, bundle=problem.evaluate(theta), smoothing=config.smoothing)
    lam = config.fairreg_weight
    while state.iter < config.max_iters_baseline:
        b = state.bundle
        grad = weights @ b.loss_grads + lam * b.disparity_grads.sum(axis=0)
        value = float(weights @ b.losses + lam * b.disparities.sum())
        sq = float(grad @ grad)
        state.history.append(_record(state, "fedave_fairreg", "optimal", sq, config.eta, value, float(np.max(b.slacks))))
        state.iter += 1
        if sq <= config.smoothing.eps_d:
            break
        state.theta = state.theta - config.eta * grad
        state.bundle = problem.evaluate(state.theta)
    state.stage = DONE
    return _final_report(state, problem, config, "fedave_fairreg", {"weights": weights.tolist()})
