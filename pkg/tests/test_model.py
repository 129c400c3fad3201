import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fcfl.model import (
    ClientShard,
    EmptyClientError,
    accuracy_of,
    bce_loss,
    grad_bce,
    predict_labels,
    predict_proba,
)

from conftest import random_shard
from oracles import bce_reference, central_diff, rel_err


def test_zero_theta_gives_half():
    X = np.random.default_rng(0).standard_normal((5, 3))
    assert np.allclose(predict_proba(np.zeros(4), X), 0.5)


def test_large_bias_saturates():
    assert np.allclose(predict_proba(np.array([0.0, 50.0]), np.array([[3.0], [-2.0]])), 1.0)


def test_hand_evaluated_probabilities():
    theta = np.array([1.0, 0.0])
    assert predict_proba(theta, np.array([[0.0]]))[0] == pytest.approx(0.5)
    assert predict_proba(theta, np.array([[math.log(3)]]))[0] == pytest.approx(0.75, abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        predict_proba(np.zeros(3), np.zeros((2, 3)))


def test_labels_threshold_at_half():
    theta = np.array([1.0, 0.0])
    X = np.array([[-1.0], [0.0], [1.0]])
    assert predict_labels(theta, X).tolist() == [0.0, 1.0, 1.0]


def test_loss_at_zero_is_ln2(shard):
    assert bce_loss(np.zeros(shard.n_features + 1), shard) == pytest.approx(math.log(2))


def test_confident_correct_loss_is_clamped():
    shard = ClientShard(np.array([[0.0]]), [1], [1])
    assert bce_loss(np.array([0.0, 100.0]), shard) == pytest.approx(1e-7, rel=1e-3)


def test_loss_hand_arithmetic():
    # logit ln 3 gives p = 0.75 on both rows
    shard = ClientShard(np.zeros((2, 1)), [1, 0], [0, 1])
    theta = np.array([0.0, math.log(3)])
    assert bce_loss(theta, shard) == pytest.approx(-(math.log(0.75) + math.log(0.25)) / 2, abs=1e-12)
    assert bce_loss(theta, shard) == pytest.approx(0.8370, abs=1e-4)


def test_gradient_hand_arithmetic():
    shard = ClientShard(np.array([[1.0]]), [1], [1])
    assert np.allclose(grad_bce(np.zeros(2), shard), [-0.5, -0.5])


def test_gradient_zero_when_prediction_matches_label():
    shard = ClientShard(np.array([[0.0]]), [1], [1])
    # p is exactly 1.0 in double precision for a huge logit
    assert np.allclose(grad_bce(np.array([0.0, 800.0]), shard), 0.0)


def test_empty_client_errors():
    empty = ClientShard(np.zeros((0, 2)), np.zeros(0), np.zeros(0), "7")
    with pytest.raises(EmptyClientError, match="empty client"):
        bce_loss(np.zeros(3), empty)
    with pytest.raises(EmptyClientError):
        grad_bce(np.zeros(3), empty)


def test_shard_validation():
    with pytest.raises(ValueError, match="binary"):
        ClientShard(np.zeros((2, 1)), [0, 2], [0, 1])
    with pytest.raises(ValueError, match="rows"):
        ClientShard(np.zeros((3, 1)), [0, 1], [0, 1])


def test_loss_matches_loop_reference(rng):
    for _ in range(20):
        s = random_shard(rng, m=15, f=2)
        theta = rng.standard_normal(3)
        assert bce_loss(theta, s) == pytest.approx(bce_reference(theta, s.features, s.label), rel=1e-12)


def test_gradient_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        s = random_shard(rng, m=int(rng.integers(5, 60)), f=int(rng.integers(1, 6)))
        theta = rng.standard_normal(s.n_features + 1)
        fd = central_diff(lambda t: bce_loss(t, s), theta)
        worst = max(worst, rel_err(grad_bce(theta, s), fd))
    assert worst <= 1e-4


def test_loss_invariant_to_sample_order(rng, shard):
    theta = rng.standard_normal(shard.n_features + 1)
    perm = rng.permutation(len(shard))
    shuffled = ClientShard(shard.features[perm], shard.label[perm], shard.sensitive[perm])
    assert bce_loss(theta, shuffled) == pytest.approx(bce_loss(theta, shard), rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(-30, 30)))
def test_proba_monotone_in_score(z):
    order = np.argsort(z, kind="stable")
    p = predict_proba(np.array([1.0, 0.0]), z[:, None])
    assert np.all(np.diff(p[order]) >= 0)
    assert np.all((p >= 0) & (p <= 1))


def test_accuracy_of(shard):
    theta = np.zeros(shard.n_features + 1)
    assert accuracy_of(theta, shard) == pytest.approx(np.mean(shard.label == 1))
