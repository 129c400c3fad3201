"""Smooth surrogate maximum (log-sum-exp) and its temperature schedule."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

DELTA_FLOOR = 1e-6


@dataclass(frozen=True)
class SmoothingState:
    delta_l: float = 0.1
    delta_g: float = 0.1
    beta: float = 0.5
    eps_d: float = 1e-8
    delta_floor: float = DELTA_FLOOR

    def __post_init__(self):
        if not (self.delta_l > 0 and self.delta_g > 0):
            raise ValueError("smoothing temperatures must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.eps_d > 0:
            raise ValueError("eps_d must be positive")
        if not self.delta_floor > 0:
            raise ValueError("delta_floor must be positive")


def _as_values(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("smooth maximum of an empty vector")
    return v


def smf_value(values, delta: float) -> float:
    """``delta * log(sum(exp(v / delta)))`` evaluated with a max shift.

    Bounded by ``max(v) <= smf <= max(v) + delta * log(N)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    v = _as_values(values)
    top = v.max()
    return float(top + delta * np.log(np.sum(np.exp((v - top) / delta))))


def smf_grad_weights(values, delta: float) -> np.ndarray:
    """Softmax weights ``w_i``; the surrogate's gradient is ``sum_i w_i grad v_i``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    v = _as_values(values)
    e = np.exp((v - v.max()) / delta)
    return e / e.sum()


def smf_with_grad(values, grads, delta: float):
    """Value and chain-rule gradient of the surrogate given per-term gradients (N x n)."""
    w = smf_grad_weights(values, delta)
    return smf_value(values, delta), w @ np.asarray(grads, dtype=float)


def decay(state: SmoothingState, direction_sq_norm: float) -> SmoothingState:
    """Shrink both temperatures by ``beta`` once the direction norm drops below ``eps_d``."""
    if direction_sq_norm <= state.eps_d:
        return replace(
            state,
            delta_l=max(state.beta * state.delta_l, state.delta_floor),
            delta_g=max(state.beta * state.delta_g, state.delta_floor),
        )
    return state


def at_floor(state: SmoothingState) -> bool:
    return state.delta_l <= state.delta_floor * (1 + 1e-9)
