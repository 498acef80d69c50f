import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from privlogit.linalg import (
    DimensionError,
    PermutationKey,
    SingularMatrixError,
    apply_permutation,
    general_solution,
    inverse,
    multiply,
    rank,
    rref,
    solve,
    solve_equilibrated,
)

small = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_multiply_matches_numpy(rng):
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    np.testing.assert_allclose(multiply(a, b), a @ b)


def test_multiply_rejects_mismatch():
    with pytest.raises(DimensionError):
        multiply(np.ones((2, 3)), np.ones((2, 3)))


def test_nan_rejected():
    with pytest.raises(ValueError):
        solve(np.array([[1.0, np.nan], [0, 1]]), [1.0, 1.0])


def test_solve_against_numpy(rng):
    for _ in range(20):
        a = rng.standard_normal((6, 6))
        b = rng.standard_normal((6, 2))
        np.testing.assert_allclose(solve(a, b), np.linalg.solve(a, b), rtol=1e-9, atol=1e-9)


def test_solve_singular_reports_pivot():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError) as info:
        solve(a, [1.0, 2.0])
    assert info.value.pivot <= info.value.threshold


def test_solve_needs_square():
    with pytest.raises(DimensionError):
        solve(np.ones((2, 3)), np.ones(2))


def test_equilibrated_handles_bad_scaling(rng):
    q = rng.standard_normal((4, 4))
    spd = q @ q.T + np.eye(4)
    d = np.diag([1e-6, 1.0, 1e6, 1e3])
    a = d @ spd @ d
    b = d @ rng.standard_normal(4)
    with pytest.raises(SingularMatrixError):
        solve(a, b)
    s = solve_equilibrated(a, b)
    dinv = np.diag(1 / np.diag(d))
    # residual measured in the scaled coordinates the solver works in
    assert np.max(np.abs(dinv @ (a @ s - b))) <= 1e-9 * np.max(np.abs(dinv @ b))


def test_inverse(rng):
    a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    np.testing.assert_allclose(inverse(a) @ a, np.eye(5), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.integers(-3, 3).map(float)))
def test_rref_matches_sympy(a):
    ours = rref(a)
    ref, pivots = sympy.Matrix(a.astype(int).tolist()).rref()
    assert ours.pivot_columns == tuple(pivots)
    np.testing.assert_allclose(ours.reduced, np.array(ref, dtype=float), atol=1e-9)


def test_rank_against_svd(rng):
    for _ in range(50):
        n, p, r = rng.integers(1, 7, size=3)
        r = min(r, n, p)
        a = rng.standard_normal((n, r)) @ rng.standard_normal((r, p))
        assert rank(a) == np.linalg.matrix_rank(a)


def test_rank_zero_matrix():
    assert rank(np.zeros((3, 4))) == 0


def test_general_solution_underdetermined(rng):
    a = rng.standard_normal((2, 5))
    b = rng.standard_normal(2)
    sol = general_solution(a, b)
    assert sol.consistent and sol.dimension == 3
    t = rng.standard_normal(3)
    np.testing.assert_allclose(a @ (sol.particular + sol.null_basis @ t), b, atol=1e-10)
    np.testing.assert_allclose(a @ sol.null_basis, 0, atol=1e-10)


def test_general_solution_inconsistent():
    a = np.array([[1.0, 1.0], [2.0, 2.0]])
    sol = general_solution(a, [1.0, 3.0])
    assert not sol.consistent
    assert sol.rank_a == 1 and sol.rank_augmented == 2


def test_general_solution_unique(rng):
    a = rng.standard_normal((4, 3))
    x = rng.standard_normal(3)
    sol = general_solution(a, a @ x)
    assert sol.dimension == 0
    np.testing.assert_allclose(sol.particular, x, atol=1e-10)


def test_permutation_matches_dense_matrix(rng):
    key = PermutationKey.random(7, rng)
    m = rng.standard_normal((7, 3))
    p = key.as_matrix()
    np.testing.assert_array_equal(apply_permutation(key, m), p @ m)
    np.testing.assert_array_equal(apply_permutation(key, m, inverse=True), p.T @ m)
    c = rng.standard_normal((2, 7))
    np.testing.assert_array_equal(apply_permutation(key, c, side="cols"), c @ p.T)


def test_permutation_composition(rng):
    a, b = PermutationKey.random(6, rng), PermutationKey.random(6, rng)
    m = rng.standard_normal((6, 2))
    np.testing.assert_array_equal(apply_permutation(a.then(b), m),
                                  apply_permutation(b, apply_permutation(a, m)))
    assert a.then(a.inverse()) == PermutationKey.identity(6)


def test_permutation_rejects_non_bijection():
    with pytest.raises(ValueError):
        PermutationKey(np.array([0, 0, 1]))


def test_permutation_does_not_freeze_caller_array():
    img = np.array([1, 0, 2])
    PermutationKey(img)
    img[0] = 1  # still writable
