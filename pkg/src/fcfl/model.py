"""Linear-logistic predictor with analytic loss and probability gradients.

Parameters are a flat vector ``theta = [w_1, ..., w_f, b]``; the bias is
handled as an appended constant feature so every gradient lives in the
same space as ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

PROB_CLAMP = 1e-7


class EmptyClientError(ValueError):
    """Raised when a loss is requested on a shard with no samples."""


@dataclass(frozen=True)
class ClientShard:
    """One client's private table: features, binary label, binary sensitive attribute."""

    features: np.ndarray
    label: np.ndarray
    sensitive: np.ndarray
    client_id: str = "0"

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        label = np.asarray(self.label, dtype=float).ravel()
        sensitive = np.asarray(self.sensitive, dtype=float).ravel()
        if features.shape[0] != label.shape[0] or label.shape != sensitive.shape:
            raise ValueError(
                f"client {self.client_id}: features has {features.shape[0]} rows, "
                f"label {label.shape[0]}, sensitive {sensitive.shape[0]}"
            )
        for name, arr in (("label", label), ("sensitive", sensitive)):
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueError(f"client {self.client_id}: {name} must be binary")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "sensitive", sensitive)
        object.__setattr__(self, "client_id", str(self.client_id))

    def __len__(self) -> int:
        return self.label.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def augment(features: np.ndarray) -> np.ndarray:
    """Append the constant bias column."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _check_dims(theta: np.ndarray, features: np.ndarray) -> None:
    if theta.ndim != 1 or theta.shape[0] != features.shape[1] + 1:
        raise ValueError(
            f"shape mismatch: theta has length {theta.shape}, "
            f"expected {features.shape[1] + 1} for {features.shape[1]} features"
        )


def score(theta, features) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    features = np.atleast_2d(np.asarray(features, dtype=float))
    _check_dims(theta, features)
    return features @ theta[:-1] + theta[-1]


def predict_proba(theta, features) -> np.ndarray:
    """Positive-class probability ``sigmoid(w.x + b)`` per row."""
    return sigmoid(score(theta, features))


def predict_labels(theta, features, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(theta, features) >= threshold).astype(float)


def proba_jacobian(theta, features) -> np.ndarray:
    """d p_i / d theta, shape (m, n)."""
    p = predict_proba(theta, features)
    return (p * (1.0 - p))[:, None] * augment(features)


def bce_loss(theta, shard: ClientShard) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    if len(shard) == 0:
        raise EmptyClientError(f"empty client {shard.client_id}")
    p = np.clip(predict_proba(theta, shard.features), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = shard.label
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def grad_bce(theta, shard: ClientShard) -> np.ndarray:
    """Analytic gradient ``(1/m) sum (p_i - y_i) [x_i; 1]``."""
    if len(shard) == 0:
        raise EmptyClientError(f"empty client {shard.client_id}")
    p = predict_proba(theta, shard.features)
    resid = p - shard.label
    return augment(shard.features).T @ resid / len(shard)


def accuracy_of(theta, shard: ClientShard, threshold: float = 0.5) -> float:
    return float(np.mean(predict_labels(theta, shard.features, threshold) == shard.label))
