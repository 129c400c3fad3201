"""Group-disparity measures, accuracy and the fairness slack.

Hard metrics (``dp_hard``, ``eo_hard``) work on thresholded labels and are
used for reporting. The soft variants replace labels with predicted
probabilities so the disparity has a gradient; they are the quantities the
optimizer constrains.
"""

from __future__ import annotations

import logging

import numpy as np

from .model import ClientShard, augment, predict_proba

log = logging.getLogger(__name__)


class DegenerateGroupError(ValueError):
    """A sensitive group (or its positive-label subset) has no samples."""


def _group_masks(sensitive, subset=None):
    sensitive = np.asarray(sensitive).ravel()
    m0 = sensitive == 0
    m1 = sensitive == 1
    if subset is not None:
        m0 = m0 & subset
        m1 = m1 & subset
    return m0, m1


def _gap(values, sensitive, subset=None, allow_degenerate=False, what="group"):
    m0, m1 = _group_masks(sensitive, subset)
    if not m0.any() or not m1.any():
        if allow_degenerate:
            log.warning("degenerate group: %s has an empty side, disparity set to 0", what)
            return None
        raise DegenerateGroupError(f"degenerate group: {what} has an empty side")
    values = np.asarray(values, dtype=float).ravel()
    return float(values[m0].mean() - values[m1].mean())


def dp_hard(pred_labels, sensitive, allow_degenerate: bool = False) -> float:
    """|P(Yhat=1 | A=0) - P(Yhat=1 | A=1)|."""
    diff = _gap(pred_labels, sensitive, allow_degenerate=allow_degenerate, what="sensitive")
    return 0.0 if diff is None else abs(diff)


def eo_hard(pred_labels, sensitive, label, allow_degenerate: bool = False) -> float:
    """Demographic parity restricted to the Y=1 subpopulation."""
    positives = np.asarray(label).ravel() == 1
    diff = _gap(pred_labels, sensitive, positives, allow_degenerate, what="positive-label")
    return 0.0 if diff is None else abs(diff)


def _soft_gap_and_grad(theta, shard: ClientShard, subset, allow_degenerate, what):
    m0, m1 = _group_masks(shard.sensitive, subset)
    n = shard.n_features + 1
    if not m0.any() or not m1.any():
        if allow_degenerate:
            log.warning("degenerate group on client %s (%s), disparity set to 0", shard.client_id, what)
            return 0.0, np.zeros(n)
        raise DegenerateGroupError(f"degenerate group on client {shard.client_id} ({what})")
    p = predict_proba(theta, shard.features)
    inner = p[m0].mean() - p[m1].mean()
    dp = (p * (1.0 - p))[:, None] * augment(shard.features)
    grad_inner = dp[m0].mean(axis=0) - dp[m1].mean(axis=0)
    # sign(0) := 0 picks the zero subgradient at the fair point
    return float(abs(inner)), np.sign(inner) * grad_inner


def dp_soft(theta, shard: ClientShard, allow_degenerate: bool = False) -> float:
    return _soft_gap_and_grad(theta, shard, None, allow_degenerate, "dp")[0]


def grad_dp_soft(theta, shard: ClientShard, allow_degenerate: bool = False) -> np.ndarray:
    return _soft_gap_and_grad(theta, shard, None, allow_degenerate, "dp")[1]


def eo_soft(theta, shard: ClientShard, allow_degenerate: bool = False) -> float:
    return _soft_gap_and_grad(theta, shard, shard.label == 1, allow_degenerate, "eo")[0]


def grad_eo_soft(theta, shard: ClientShard, allow_degenerate: bool = False) -> np.ndarray:
    return _soft_gap_and_grad(theta, shard, shard.label == 1, allow_degenerate, "eo")[1]


def soft_disparity(theta, shard: ClientShard, metric: str = "dp", allow_degenerate: bool = False):
    """Return ``(value, gradient)`` of the soft disparity named by ``metric``."""
    if metric == "dp":
        subset = None
    elif metric == "eo":
        subset = shard.label == 1
    else:
        raise ValueError(f"unknown disparity metric {metric!r}")
    return _soft_gap_and_grad(theta, shard, subset, allow_degenerate, metric)


def hard_disparity(pred_labels, shard: ClientShard, metric: str = "dp", allow_degenerate: bool = False) -> float:
    if metric == "dp":
        return dp_hard(pred_labels, shard.sensitive, allow_degenerate)
    if metric == "eo":
        return eo_hard(pred_labels, shard.sensitive, shard.label, allow_degenerate)
    raise ValueError(f"unknown disparity metric {metric!r}")


def fairness_slack(disparity, budget):
    """g - eps; non-positive means the client's constraint holds."""
    out = np.subtract(disparity, budget, dtype=float)
    return float(out) if out.ndim == 0 else out


def accuracy(pred_labels, label) -> float:
    pred_labels = np.asarray(pred_labels).ravel()
    label = np.asarray(label).ravel()
    if pred_labels.shape != label.shape:
        raise ValueError("pred_labels and label differ in length")
    if label.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(pred_labels == label))
