from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sgfm.distributions import make_distribution
from sgfm.ot import cost_matrix, couple, ot_minibatch, solve_assignment


def brute_force(cost):
    """Optimal cost and the lexicographically smallest optimal permutation."""
    n = len(cost)
    best, best_perm = np.inf, None
    for perm in permutations(range(n)):  # itertools yields lexicographic order
        c = cost[np.arange(n), perm].sum()
        if c < best - 1e-9:
            best, best_perm = c, perm
    return best, np.array(best_perm)


def test_cost_matrix_hand_example():
    assert np.array_equal(cost_matrix(np.array([0.0, 2.0]), np.array([1.0, 3.0])), [[1, 9], [1, 1]])


def test_cost_matrix_properties():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
    assert np.all(np.diag(cost_matrix(a, a)) == 0)
    assert np.all(cost_matrix(a, b) >= 0)
    assert np.allclose(cost_matrix(a, b), cost_matrix(b, a).T)
    with pytest.raises(ValueError):
        cost_matrix(a, b[:3])


def test_two_by_two_example():
    perm, total = solve_assignment(np.array([[1.0, 9.0], [1.0, 1.0]]))
    assert list(perm) == [0, 1] and total == 2.0


def test_zero_matrix_gives_identity():
    perm, total = solve_assignment(np.zeros((6, 6)))
    assert list(perm) == list(range(6)) and total == 0.0


def test_rejects_bad_matrices():
    with pytest.raises(ValueError):
        solve_assignment(np.array([[0.0, np.inf], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        solve_assignment(np.zeros((2, 3)))


def test_random_six_by_six_equals_exhaustive():
    rng = np.random.default_rng(42)
    for _ in range(100):
        c = rng.random((6, 6))
        perm, total = solve_assignment(c)
        best, best_perm = brute_force(c)
        assert total == pytest.approx(best, abs=1e-12)
        assert sorted(perm) == list(range(6))
        assert np.array_equal(perm, best_perm)


@settings(max_examples=300, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6)).map(lambda t: (t[0], t[0])), elements=st.integers(0, 3)))
def test_ties_break_to_lexicographic_minimum(cost):
    cost = cost.astype(float)
    perm, total = solve_assignment(cost)
    best, best_perm = brute_force(cost)
    assert total == best
    assert np.array_equal(perm, best_perm)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**32 - 1))
def test_beats_random_permutations(n, seed):
    rng = np.random.default_rng(seed)
    c = cost_matrix(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
    _, total = solve_assignment(c)
    for _ in range(20):
        p = rng.permutation(n)
        assert total <= c[np.arange(n), p].sum() + 1e-9


def test_non_canonical_solve_is_optimal():
    c = np.random.default_rng(3).random((6, 6))
    assert solve_assignment(c, canonical=False)[1] == pytest.approx(brute_force(c)[0])


def test_coupling_preserves_marginals():
    rng = np.random.default_rng(1)
    x0, x1 = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
    c = couple(x0, x1)
    s, t = c.pairs()
    assert np.array_equal(s, x0)
    assert np.array_equal(np.sort(t, axis=0), np.sort(x1, axis=0))
    assert sorted(c.perm) == list(range(50))
    assert c.cost == pytest.approx(np.sum((s - t) ** 2))


def test_independent_coupling_is_identity():
    rng = np.random.default_rng(1)
    x0, x1 = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    c = couple(x0, x1, "independent")
    assert list(c.perm) == list(range(5))
    with pytest.raises(ValueError):
        couple(x0, x1, "sinkhorn")


def test_minibatch_examples():
    spec = make_distribution("gaussian_std")
    one = ot_minibatch(spec, np.array([[1.0, 2.0]]), batch_size=1, seed=0)
    assert one.cost == pytest.approx(np.sum((one.source[0] - [1.0, 2.0]) ** 2))
    x = np.random.default_rng(0).normal(size=(6, 2))
    same = couple(x, x[::-1].copy())
    assert same.cost == pytest.approx(0.0)
    six = ot_minibatch(make_distribution("uniform_square"), make_distribution("eight_gaussians"), 6, seed=4)
    assert six.cost == pytest.approx(brute_force(cost_matrix(six.source, six.target))[0])
    with pytest.raises(ValueError):
        ot_minibatch(spec, spec, batch_size=0)


def test_minibatch_deterministic():
    a = ot_minibatch(make_distribution("uniform_square"), make_distribution("eight_gaussians"), 64, seed=9)
    b = ot_minibatch(make_distribution("uniform_square"), make_distribution("eight_gaussians"), 64, seed=9)
    assert np.array_equal(a.perm, b.perm) and np.array_equal(a.source, b.source)
