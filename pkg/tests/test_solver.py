import itertools

import numpy as np
import pytest
from scipy.optimize import minimize

from privlogit.linalg import SingularMatrixError
from privlogit.solver import (
    DivergenceError,
    FitConfig,
    UndefinedAUCError,
    add_intercept,
    auc,
    fit,
    gradient,
    log_likelihood,
    newton_step,
    predict,
    probabilities,
)


def test_probabilities_at_zero():
    np.testing.assert_array_equal(probabilities(np.ones((3, 2)), np.zeros(2)), 0.5)


def test_probabilities_saturate_without_overflow():
    with np.errstate(over="raise"):
        p = probabilities(np.array([[1.0], [1.0]]), np.array([40.0]))
        q = probabilities(np.array([[1.0]]), np.array([-800.0]))
    assert abs(p[0] - 1) < 1e-12 and q[0] >= 0


def test_probabilities_direct_formula(rng):
    x, b = rng.standard_normal((3, 2)), rng.standard_normal(2)
    np.testing.assert_allclose(probabilities(x, b), np.exp(x @ b) / (1 + np.exp(x @ b)), rtol=1e-14)


def test_newton_step_from_zero_semi_analytic(rng):
    x = add_intercept(rng.standard_normal((12, 3)))
    y = (rng.uniform(size=12) < 0.5).astype(float)
    lam = 0.7
    lam_mat = np.diag([0, lam, lam, lam])
    # at beta = 0 every p is 0.5 so W = I/4
    expected = np.linalg.solve(0.25 * x.T @ x + lam_mat, x.T @ (y - 0.5))
    np.testing.assert_allclose(newton_step(x, np.zeros(4), y=y, lam=lam), expected, rtol=1e-12)


def test_identity_keys_give_identical_step(rng):
    x = add_intercept(rng.standard_normal((20, 3)))
    y = (rng.uniform(size=20) < 0.5).astype(float)
    beta = rng.standard_normal(4) * 0.1
    a = newton_step(x, beta, y=y, lam=0.3)
    b = newton_step(x, beta, z=x.T @ y, lam=0.3, b_star=np.eye(4))
    np.testing.assert_array_equal(a, b)


def test_separable_with_ridge_is_finite():
    x = add_intercept(np.array([[-2.0], [-1.0], [1.0], [2.0]]))
    y = np.array([0.0, 0, 1, 1])
    r = fit(x, y=y, config=FitConfig(lam=1.0))
    assert r.converged and np.all(np.isfinite(r.beta))


def test_separable_without_ridge_fails_loudly():
    x = add_intercept(np.array([[-2.0], [-1.0], [1.0], [2.0]]))
    y = np.array([0.0, 0, 1, 1])
    with pytest.raises((SingularMatrixError, DivergenceError)):
        fit(x, y=y, config=FitConfig(lam=0.0, max_iters=200))


def test_all_zero_labels_push_intercept_down(rng):
    # the intercept is never penalised, so its optimum is at minus infinity:
    # the slopes shrink to zero and the intercept falls by about 1 per step
    x = add_intercept(rng.standard_normal((30, 3)))
    r = fit(x, y=np.zeros(30), config=FitConfig(lam=1.0, max_iters=30))
    assert r.beta[0] < -20
    np.testing.assert_allclose(r.beta[1:], 0, atol=1e-8)
    assert not r.converged


def test_max_iters_one_records_one_step(rng):
    x = add_intercept(rng.standard_normal((10, 2)))
    y = np.array([0, 1] * 5, dtype=float)
    r = fit(x, y=y, config=FitConfig(max_iters=1))
    assert r.iterations == 1 and len(r.step_norm_history) == 1


def test_fit_matches_direct_optimisation(rng):
    x = add_intercept(rng.standard_normal((80, 4)))
    y = (rng.uniform(size=80) < probabilities(x, [0.3, 1, -1, 0.5, 0])).astype(float)
    for lam in (0.0, 2.0):
        r = fit(x, y=y, config=FitConfig(lam=lam))
        opt = minimize(lambda b: -log_likelihood(x, y, b, lam), np.zeros(5),
                       jac=lambda b: -gradient(x, y, b, lam), method="BFGS", options={"gtol": 1e-10})
        assert r.converged
        np.testing.assert_allclose(r.beta, opt.x, atol=1e-6)
        assert r.step_norm_history[-1] < r.step_norm_history[0]


def test_gradient_central_differences(rng):
    for seed in range(3):
        g = np.random.default_rng(seed)
        x = add_intercept(g.standard_normal((25, 3)))
        y = (g.uniform(size=25) < 0.4).astype(float)
        beta, lam, h = g.standard_normal(4) * 0.5, 0.8, 1e-6
        fd = np.array([(log_likelihood(x, y, beta + h * e, lam) - log_likelihood(x, y, beta - h * e, lam)) / (2 * h)
                       for e in np.eye(4)])
        np.testing.assert_allclose(gradient(x, y, beta, lam), fd, rtol=1e-5, atol=1e-7)


def test_duplicating_samples_leaves_beta_unchanged(rng):
    x = add_intercept(rng.standard_normal((40, 3)))
    y = (rng.uniform(size=40) < probabilities(x, [0, 1, 1, -1])).astype(float)
    a = fit(x, y=y).beta
    b = fit(np.vstack([x, x]), y=np.concatenate([y, y])).beta
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_predict_matches_probabilities(rng):
    x = rng.standard_normal((4, 3))
    beta = rng.standard_normal(3)
    assert predict(beta, x[1]) == pytest.approx(probabilities(x, beta)[1], rel=1e-15)
    assert predict(np.zeros(3), x[0]) == 0.5
    assert predict(np.array([1000.0]), np.array([1.0])) == 1.0


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    return sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg)) / (len(pos) * len(neg))


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5


def test_auc_matches_brute_force(rng):
    for _ in range(30):
        n = int(rng.integers(2, 30))
        scores = rng.integers(0, 5, size=n).astype(float)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        assert auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-15)


def test_auc_single_class():
    with pytest.raises(UndefinedAUCError):
        auc([0.1, 0.2], [1, 1])


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(tol=0)
    with pytest.raises(ValueError):
        FitConfig(lam=-1)
    with pytest.raises(ValueError):
        FitConfig(max_iters=0)
