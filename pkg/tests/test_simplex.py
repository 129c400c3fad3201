import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcfl.simplex import solve_lp

from oracles import grid_lp, vertex_lp


def test_vertex_optimum():
    res = solve_lp([1.0, -1.0])
    assert res.status == "optimal"
    assert np.allclose(res.alpha, [0, 1])
    assert res.objective == pytest.approx(-1.0)


def test_zero_objective_any_feasible_point():
    res = solve_lp([0.0, 0.0], [[1.0, 0.0]], [0.3])
    assert res.status == "optimal"
    assert res.objective == 0.0
    assert res.alpha[0] <= 0.3 + 1e-12
    assert res.alpha.sum() == pytest.approx(1.0, abs=1e-12)


def test_single_variable():
    res = solve_lp([2.5])
    assert res.alpha.tolist() == [1.0]
    assert res.objective == 2.5


def test_infeasible_detected():
    # alpha_1 >= 0.8 and alpha_2 >= 0.8 cannot both hold on the simplex
    res = solve_lp([0.0, 0.0], [[-1.0, 0.0], [0.0, -1.0]], [-0.8, -0.8])
    assert res.status == "infeasible"
    assert res.alpha is None


def test_binding_row():
    # minimise -alpha_1 with alpha_1 <= 0.25
    res = solve_lp([-1.0, 0.0, 0.0], [[1.0, 0.0, 0.0]], [0.25])
    assert res.objective == pytest.approx(-0.25)


def test_degenerate_ties_are_deterministic():
    c = [0.0, 0.0, 0.0, 0.0]
    A = [[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0]]
    b = [0.5, 0.5, 0.5]
    first = solve_lp(c, A, b)
    for _ in range(5):
        assert np.array_equal(solve_lp(c, A, b).alpha, first.alpha)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_lp([])
    with pytest.raises(ValueError):
        solve_lp([1.0, np.nan])
    with pytest.raises(ValueError):
        solve_lp([1.0, 0.0], [[1.0, 0.0]], [1.0, 2.0])


def _random_lp(rng):
    m = int(rng.integers(1, 7))
    k = int(rng.integers(0, 5))
    c = rng.uniform(-1, 1, m)
    A = rng.uniform(-1, 1, (k, m))
    b = rng.uniform(-0.5, 0.5, k)
    return c, A, b


def test_matches_vertex_enumeration(rng):
    infeasible = 0
    for _ in range(400):
        c, A, b = _random_lp(rng)
        res = solve_lp(c, A, b)
        ref = vertex_lp(c, A, b)
        if ref is None:
            assert res.status == "infeasible"
            infeasible += 1
            continue
        assert res.status == "optimal"
        assert res.objective == pytest.approx(ref, abs=1e-9)
        assert np.all(res.alpha >= 0) and abs(res.alpha.sum() - 1) <= 1e-10
        if A.size:
            assert np.all(A @ res.alpha <= b + 1e-8)
    assert 0 < infeasible < 400


def test_matches_dense_grid_small(rng):
    checked = 0
    while checked < 60:
        c, A, b = _random_lp(rng)
        if len(c) > 3:
            continue
        res = solve_lp(c, A, b)
        ref = grid_lp(c, A, b)
        if ref is None or res.status != "optimal":
            continue
        assert abs(res.objective - ref) <= 2e-3
        assert res.objective <= ref + 1e-12
        checked += 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solution_on_simplex(seed):
    c, A, b = _random_lp(np.random.default_rng(seed))
    res = solve_lp(c, A, b)
    if res.status == "optimal":
        assert np.all(res.alpha >= 0)
        assert abs(res.alpha.sum() - 1) <= 1e-10
