import numpy as np
import pytest
import sympy

from privlogit.attacks import (
    INFINITE,
    NO_SOLUTION,
    analyze_cpa,
    build_cpa_system,
    collusion_harness,
    kpa_scenario1,
    kpa_scenario2,
    row_matched_error,
    separate_key_estimate,
    sigma_scaling_experiment,
)
from privlogit.keys import Basis, gen_basis, gen_commutative_key, gen_gaussian_basis, key_from_coefficients
from privlogit.linalg import PermutationKey, apply_permutation

from conftest import make_agencies

B0 = np.array([[0.0, 0, 1], [0, 1, 0], [1, 0, 1]])
TRUE = np.array([8.0, 0.3, -2.0])


def toy_system():
    key = key_from_coefficients(Basis.from_matrix(B0), TRUE)
    return build_cpa_system(np.eye(3), key.materialized, B0)


def test_system_shape_and_blocks(rng):
    s = toy_system()
    assert s.r.shape == (3, 9) and s.m == 3
    np.testing.assert_allclose(s.r, np.hstack([B0, B0 @ B0, B0 @ B0 @ B0]))
    x1 = rng.standard_normal((4, 3))
    a = PermutationKey.random(4, rng)
    s2 = build_cpa_system(x1, x1, B0, a)
    for j in range(3):
        np.testing.assert_allclose(s2.r[:, 3 * j:3 * j + 3],
                                   a.as_matrix() @ x1 @ np.linalg.matrix_power(B0, j + 1))


def test_toy_verdict_and_families():
    v = analyze_cpa(toy_system(), true_coeffs=TRUE)
    assert v.outcomes == [INFINITE] * 3
    assert all(c.dimension == 6 and c.rank_r == 3 for c in v.columns)
    # exact rational oracle for each structured family
    b0 = sympy.Matrix([[0, 0, 1], [0, 1, 0], [1, 0, 1]])
    key = 8 * b0 + sympy.Rational(3, 10) * b0 ** 2 - 2 * b0 ** 3
    b = sympy.symbols("b1:4")
    for j, col in enumerate(v.columns):
        rj = sympy.Matrix.hstack(*[(b0 ** (k + 1))[:, j] for k in range(3)])
        (family,) = sympy.linsolve((rj, key[:, j]), *b)
        free = set().union(*[sympy.sympify(e).free_symbols for e in family])
        assert col.structured.dimension == len(free)
        assert col.true_key_member
        # every member of our family solves the exact system
        for t in np.linspace(-3, 3, 4):
            cand = col.structured.particular + col.structured.null_basis @ np.full(col.structured.dimension, t)
            np.testing.assert_allclose(np.array(rj, dtype=float) @ cand, np.array(key[:, j], dtype=float).ravel(), atol=1e-9)
    # the families meet in exactly one point, the true key, because A21 equals the guess
    assert v.consistent_across_columns
    np.testing.assert_allclose(v.recovered, TRUE, atol=1e-9)
    assert v.recovers_true_key


def test_zero_system():
    s = build_cpa_system(np.zeros((3, 3)), np.eye(3), B0)
    v = analyze_cpa(s)
    assert v.outcomes == [NO_SOLUTION] * 3 and all(c.rank_r == 0 for c in v.columns)


def random_instance(seed, n_offset, force_guess=None):
    g = np.random.default_rng(seed)
    p = int(g.integers(2, 6))
    n = p + n_offset
    basis = gen_basis(p, p, seed)
    key = gen_commutative_key(basis, [seed, 1])
    x1 = g.standard_normal((n, p))
    a = PermutationKey.random(n, g)
    if force_guess is False:
        while a == PermutationKey.identity(n):
            a = PermutationKey.random(n, g)
    elif force_guess:
        a = PermutationKey.identity(n)
    obs = apply_permutation(a, x1 @ key.materialized)
    return build_cpa_system(x1, obs, basis.matrix()), key, a, n, p


def test_overdetermined_no_solution():
    for seed in range(50):
        s, key, _, _, _ = random_instance(seed, 1, force_guess=False)
        v = analyze_cpa(s, true_coeffs=key.coeffs[0])
        assert set(v.outcomes) == {NO_SOLUTION}
        assert not v.recovers_true_key


def test_overdetermined_consistent_when_guess_right():
    s, key, _, _, _ = random_instance(3, 1, force_guess=True)
    assert NO_SOLUTION not in analyze_cpa(s).outcomes


def test_underdetermined_infinite_dimension():
    for seed in range(50):
        s, _, _, n, p = random_instance(seed, 0)
        v = analyze_cpa(s)
        assert set(v.outcomes) == {INFINITE}
        assert all(c.dimension == p * p - n for c in v.columns)


def test_trichotomy_matches_svd_rank():
    for seed in range(60):
        s, _, _, _, _ = random_instance(seed, int(seed % 3) - 1)
        v = analyze_cpa(s)
        for j, c in enumerate(v.columns):
            r = np.linalg.matrix_rank(s.r)
            ra = np.linalg.matrix_rank(np.column_stack([s.r, s.targets[:, j]]))
            expected = NO_SOLUTION if r < ra else ("Unique" if r == s.r.shape[1] else INFINITE)
            assert (c.rank_r, c.outcome) == (r, expected)


def test_true_key_recovered_only_when_guess_matches():
    hits = 0
    for seed in range(100):
        s, key, a, n, _ = random_instance(seed, 0)
        v = analyze_cpa(s, true_coeffs=key.coeffs[0])
        if v.recovers_true_key:
            hits += 1
            assert a == PermutationKey.identity(n)
    assert hits < 50


def test_kpa1_identity_and_random(rng):
    x = rng.standard_normal((40, 4))
    assert kpa_scenario1(x, x[:20], x[20:]).recovery_error < 1e-12
    basis = gen_basis(4, 4, 1)
    b = gen_commutative_key(basis, 2).materialized
    a = PermutationKey.random(40, rng)
    rep = kpa_scenario1(apply_permutation(a, x @ b), x[:20], x[20:])
    assert rep.recovery_error > 0.05


def test_masked_gram_halving_sigma(rng):
    x = rng.standard_normal((30, 4))
    g = x.T @ x
    mags = [np.mean([np.abs(gen_gaussian_basis(4, s, [i, t]).T @ g @ gen_gaussian_basis(4, s, [i, t])).max()
                     for t in range(300)]) for i, s in enumerate([0.2, 0.1])]
    assert 3.2 < mags[0] / mags[1] < 4.8


def test_sigma_scaling(rng):
    res = sigma_scaling_experiment(rng.standard_normal((30, 5)), [0.01, 0.1, 1.0], trials=60, seed=1)
    assert 1.8 <= res.slope <= 2.2
    e1 = sigma_scaling_experiment(np.array([[1.0, 0, 0]]), [0.01, 0.1, 1.0], trials=100, seed=2)
    assert 1.8 <= e1.slope <= 2.2


def test_sigma_scaling_preconditions():
    with pytest.raises(ValueError):
        sigma_scaling_experiment(np.eye(2), [0.1])
    with pytest.raises(ValueError):
        sigma_scaling_experiment(np.zeros((2, 2)), [0.1, 1.0])


def test_kpa2(rng):
    x11, x22 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    x = np.hstack([x11, x22])
    exact = kpa_scenario2(x, 3, x11, x22)
    assert exact.feasible and exact.recovery_error < 1e-10
    basis = gen_basis(6, 6, 3)
    b = gen_commutative_key(basis, 4).materialized
    a = PermutationKey.random(3, rng)
    rep = kpa_scenario2(apply_permutation(a, x @ b), 3, x11, x22)
    assert rep.feasible and rep.recovery_error > 0.05
    assert not kpa_scenario2(rng.standard_normal((4, 6)), 3, x11).feasible
    assert not kpa_scenario2(np.zeros((3, 6)), 3, x11).feasible


def test_separate_key_closed_form(rng):
    x11, x22 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    basis = gen_basis(3, 3, 0)
    b1, b2 = (gen_commutative_key(basis, s).materialized for s in (1, 2))
    out = separate_key_estimate(x11, x22, PermutationKey.random(3, rng), b1, b2)
    np.testing.assert_allclose(out["direct"], out["closed_form"], atol=1e-9)
    assert out["recovery_error"] > 0.05


def test_row_matched_error_ignores_order(rng):
    x = rng.standard_normal((6, 2))
    assert row_matched_error(x[::-1], x) < 1e-15


def test_collusion():
    _, _, ds = make_agencies(80, 4, 4, seed=1)
    honest = collusion_harness(ds, seed=3)
    assert honest.residual_hops == (1,) and honest.row_matched_error > 0.1
    full = collusion_harness(ds, compromised=[1, 2, 3, 4], seed=3)
    assert full.error < 1e-10
    _, _, ds2 = make_agencies(40, 3, 2, seed=2)
    pair = collusion_harness(ds2, seed=1)
    assert pair.compromised == (2,) and pair.residual_hops == (1,)
