import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcfl.metrics import (
    DegenerateGroupError,
    accuracy,
    dp_hard,
    dp_soft,
    eo_hard,
    eo_soft,
    fairness_slack,
    grad_dp_soft,
    grad_eo_soft,
    hard_disparity,
    soft_disparity,
)
from fcfl.model import ClientShard, predict_labels

from conftest import random_shard
from oracles import central_diff, dp_soft_reference, rel_err


def test_dp_hard_examples():
    assert dp_hard([1, 1, 1, 1], [0, 0, 1, 1]) == 0.0
    assert dp_hard([1, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(0.5)
    assert dp_hard([1, 0, 0, 1], [0, 0, 1, 1]) == 0.0


def test_eo_hard_examples():
    label = [1, 1, 1, 1, 0]
    sens = [0, 0, 1, 1, 1]
    assert eo_hard([1, 1, 1, 1, 1], sens, label) == 0.0
    assert eo_hard([1, 1, 0, 1, 0], sens, label) == pytest.approx(0.5)
    assert eo_hard(label, sens, label) == 0.0


def test_degenerate_group_policy():
    with pytest.raises(DegenerateGroupError, match="degenerate group"):
        dp_hard([1, 0], [1, 1])
    with pytest.raises(DegenerateGroupError):
        eo_hard([1, 0, 1], [0, 1, 1], [0, 1, 1])
    assert dp_hard([1, 0], [1, 1], allow_degenerate=True) == 0.0
    shard = ClientShard(np.ones((3, 1)), [1, 0, 1], [1, 1, 1])
    value, grad = soft_disparity(np.ones(2), shard, allow_degenerate=True)
    assert value == 0.0 and not grad.any()
    with pytest.raises(DegenerateGroupError):
        dp_soft(np.ones(2), shard)


def test_soft_zero_theta(shard):
    theta = np.zeros(shard.n_features + 1)
    assert dp_soft(theta, shard) == 0.0
    assert not grad_dp_soft(theta, shard).any()


def test_soft_hand_evaluation():
    shard = ClientShard(np.array([[0.0], [2.0]]), [0, 1], [0, 1])
    expected = abs(0.5 - 1 / (1 + math.exp(-2)))
    assert dp_soft(np.array([1.0, 0.0]), shard) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.3808, abs=1e-4)


def test_soft_matches_loop_reference(rng):
    for _ in range(20):
        s = random_shard(rng, m=12, f=2)
        theta = rng.standard_normal(3)
        assert dp_soft(theta, s) == pytest.approx(dp_soft_reference(theta, s.features, s.sensitive), rel=1e-12)
        pos = s.label == 1
        assert eo_soft(theta, s) == pytest.approx(
            dp_soft_reference(theta, s.features, s.sensitive, pos), rel=1e-12
        )


@pytest.mark.parametrize("value, grad", [(dp_soft, grad_dp_soft), (eo_soft, grad_eo_soft)])
def test_soft_gradients_match_finite_differences(rng, value, grad):
    worst, n = 0.0, 0
    while n < 100:
        s = random_shard(rng, m=int(rng.integers(8, 50)), f=int(rng.integers(1, 5)))
        theta = rng.standard_normal(s.n_features + 1)
        if value(theta, s) < 1e-3:
            continue  # stay away from the kink of the absolute value
        fd = central_diff(lambda t: value(t, s), theta)
        worst = max(worst, rel_err(grad(theta, s), fd))
        n += 1
    assert worst <= 1e-4


def test_saturated_soft_equals_hard(rng):
    s = random_shard(rng, m=30, f=2)
    theta = rng.standard_normal(3) * 1e4
    labels = predict_labels(theta, s.features)
    assert dp_soft(theta, s) == pytest.approx(dp_hard(labels, s.sensitive), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounds_and_group_swap_symmetry(seed):
    rng = np.random.default_rng(seed)
    s = random_shard(rng, m=16, f=2)
    theta = rng.standard_normal(3) * 3
    swapped = ClientShard(s.features, s.label, 1 - s.sensitive)
    labels = predict_labels(theta, s.features)
    for metric in ("dp", "eo"):
        v, _ = soft_disparity(theta, s, metric)
        w, _ = soft_disparity(theta, swapped, metric)
        assert 0 <= v <= 1
        assert v == pytest.approx(w, abs=1e-15)
        h = hard_disparity(labels, s, metric)
        assert 0 <= h <= 1
        assert h == pytest.approx(hard_disparity(labels, swapped, metric), abs=1e-15)


def test_unknown_metric(shard):
    with pytest.raises(ValueError):
        soft_disparity(np.zeros(4), shard, "odds")


def test_fairness_slack_examples():
    assert fairness_slack(0.05, 0.05) == 0.0
    assert fairness_slack(0.0, 0.01) == pytest.approx(-0.01)
    assert fairness_slack(0.12, 0.05) == pytest.approx(0.07)
    assert np.allclose(fairness_slack(np.array([0.1, 0.2]), np.array([0.1, 0.1])), [0.0, 0.1])


def test_accuracy_examples():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([0, 1], [1, 0]) == 0.0
    assert accuracy([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5
