"""Simulated federation: per-client local evaluation and server-side aggregation.

Each communication round every client evaluates the broadcast parameters on
its private shard and returns a :class:`ClientRecord` made of scalars and
length-n vectors only. The server orders records by client id and stacks
them into an :class:`ObjectiveBundle`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
import pandas as pd

from . import metrics
from .model import ClientShard, accuracy_of, bce_loss, grad_bce, predict_labels

log = logging.getLogger(__name__)


class EmptySplitError(ValueError):
    pass


@dataclass(frozen=True)
class ClientRecord:
    client_id: str
    n_samples: int
    loss: float
    loss_grad: np.ndarray
    disparity: float
    disparity_grad: np.ndarray
    slack: float
    hard_disparity: float


@dataclass(frozen=True)
class ObjectiveBundle:
    losses: np.ndarray
    loss_grads: np.ndarray
    disparities: np.ndarray
    disparity_grads: np.ndarray
    slacks: np.ndarray
    hard_disparities: np.ndarray

    def __post_init__(self):
        N = self.losses.shape[0]
        for f in fields(self):
            arr = getattr(self, f.name)
            if arr.shape[0] != N:
                raise ValueError(f"bundle field {f.name} has {arr.shape[0]} entries, expected {N}")
        total = sum(float(np.sum(getattr(self, f.name))) for f in fields(self))
        if not np.isfinite(total):
            raise ValueError("objective bundle contains non-finite values")
        if self.loss_grads.shape != self.disparity_grads.shape:
            raise ValueError("loss and disparity gradients differ in shape")

    @property
    def num_clients(self) -> int:
        return self.losses.shape[0]


def client_round(theta, shard: ClientShard, budget: float, metric: str = "dp", allow_degenerate: bool = False) -> ClientRecord:
    """Everything one client sends back for the broadcast ``theta``."""
    theta = np.asarray(theta, dtype=float)
    value, grad = metrics.soft_disparity(theta, shard, metric, allow_degenerate)
    hard = metrics.hard_disparity(predict_labels(theta, shard.features), shard, metric, allow_degenerate)
    return ClientRecord(
        client_id=shard.client_id,
        n_samples=len(shard),
        loss=bce_loss(theta, shard),
        loss_grad=grad_bce(theta, shard),
        disparity=value,
        disparity_grad=grad,
        slack=metrics.fairness_slack(value, budget),
        hard_disparity=hard,
    )


def _id_key(cid: str):
    return (0, int(cid), cid) if cid.lstrip("-").isdigit() else (1, 0, cid)


def aggregate(records) -> ObjectiveBundle:
    """Stack client records into a bundle, ordered by client id."""
    records = sorted(records, key=lambda r: _id_key(r.client_id))
    if not records:
        raise ValueError("aggregate needs at least one client record")
    dims = {r.loss_grad.shape for r in records} | {r.disparity_grad.shape for r in records}
    if len(dims) != 1:
        raise ValueError(f"client gradients disagree in dimension: {sorted(dims)}")
    return ObjectiveBundle(
        losses=np.array([r.loss for r in records]),
        loss_grads=np.vstack([r.loss_grad for r in records]),
        disparities=np.array([r.disparity for r in records]),
        disparity_grads=np.vstack([r.disparity_grad for r in records]),
        slacks=np.array([r.slack for r in records]),
        hard_disparities=np.array([r.hard_disparity for r in records]),
    )


@dataclass
class FederatedProblem:
    """Clients, their budgets and the disparity metric being constrained."""

    clients: list
    budgets: np.ndarray
    disparity_metric: str = "dp"
    allow_degenerate_groups: bool = False
    workers: int = 1

    def __post_init__(self):
        self.budgets = np.asarray(self.budgets, dtype=float).ravel()
        if len(self.clients) < 1:
            raise ValueError("a federated problem needs at least one client")
        if self.budgets.shape[0] != len(self.clients):
            raise ValueError(f"{self.budgets.shape[0]} budgets for {len(self.clients)} clients")
        if np.any(self.budgets < 0):
            raise ValueError("fairness budgets must be non-negative")
        if self.disparity_metric not in ("dp", "eo"):
            raise ValueError(f"unknown disparity metric {self.disparity_metric!r}")
        ids = [c.client_id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ValueError("client ids must be unique")
        # keep clients in the same order the aggregate uses
        order = sorted(range(len(ids)), key=lambda i: _id_key(ids[i]))
        self.clients = [self.clients[i] for i in order]
        self.budgets = self.budgets[order]
        dims = {c.n_features for c in self.clients}
        if len(dims) != 1:
            raise ValueError(f"clients disagree on feature count: {sorted(dims)}")

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].n_features + 1

    @property
    def client_ids(self) -> list:
        return [c.client_id for c in self.clients]

    def client_weights(self) -> np.ndarray:
        n = np.array([len(c) for c in self.clients], dtype=float)
        return n / n.sum()

    def initial_theta(self) -> np.ndarray:
        return np.zeros(self.dim)

    def evaluate(self, theta) -> ObjectiveBundle:
        def one(i):
            return client_round(
                theta, self.clients[i], self.budgets[i], self.disparity_metric, self.allow_degenerate_groups
            )

        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                records = list(pool.map(one, range(self.num_clients)))
        else:
            records = [one(i) for i in range(self.num_clients)]
        return aggregate(records)

    def client_metrics(self, theta, shards=None) -> list:
        """Per-client accuracy, hard/soft disparity and loss (reporting only)."""
        shards = self.clients if shards is None else shards
        out = []
        for shard in shards:
            labels = predict_labels(theta, shard.features)
            soft, _ = metrics.soft_disparity(theta, shard, self.disparity_metric, self.allow_degenerate_groups)
            out.append(
                {
                    "client_id": shard.client_id,
                    "n_samples": len(shard),
                    "accuracy": accuracy_of(theta, shard),
                    "hard_disparity": metrics.hard_disparity(
                        labels, shard, self.disparity_metric, self.allow_degenerate_groups
                    ),
                    "soft_disparity": soft,
                    "loss": bce_loss(theta, shard),
                }
            )
        return out

    def with_budgets(self, budgets) -> "FederatedProblem":
        return FederatedProblem(
            list(self.clients), budgets, self.disparity_metric, self.allow_degenerate_groups, self.workers
        )


def split_by_predicate(dataset: pd.DataFrame, column: str, predicate, ids=("1", "0"), allow_empty: bool = False):
    """Partition rows by ``predicate(value)`` on one column -> (true side, false side).

    ``predicate`` may be a callable or a literal value tested for equality.
    Returned frames carry a ``client_id`` attribute in ``.attrs``.
    """
    if column not in dataset.columns:
        raise KeyError(f"split column {column!r} not in table")
    test = predicate if callable(predicate) else (lambda v, target=predicate: v == target)
    mask = dataset[column].map(test).astype(bool).to_numpy()
    sides = []
    for cid, m in zip(ids, (mask, ~mask)):
        part = dataset.loc[m].copy()
        part.attrs["client_id"] = str(cid)
        if len(part) == 0:
            log.warning("split on %r leaves client %s empty", column, cid)
            if not allow_empty:
                raise EmptySplitError(f"empty side: split on {column!r} leaves client {cid} without rows")
        sides.append(part)
    return sides[0], sides[1]


def split_by_key(dataset: pd.DataFrame, key: str) -> list:
    """One frame per distinct value of ``key``, in sorted key order."""
    if key not in dataset.columns:
        raise KeyError(f"split column {key!r} not in table")
    parts = []
    for value, part in dataset.groupby(key, sort=True):
        part = part.copy()
        part.attrs["client_id"] = str(value)
        parts.append(part)
    return parts
