import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modfx.learners import (
    GradientBoostedTrees,
    LogisticModel,
    MeanRegression,
    NotFittedError,
    RidgeRegression,
    fit_gbt,
    fit_logistic,
    fit_ridge,
    logistic_gradient,
    logistic_objective,
)

rng = np.random.default_rng(0)


# ---------------------------------------------------------------------------
# ridge


def test_ridge_exact_interpolation_without_penalty():
    x = np.linspace(-2, 2, 20)[:, None]
    y = 3.0 * x[:, 0] - 1.5
    model = fit_ridge(x, y, l2=0.0)
    assert np.allclose(model.predict(x), y, atol=1e-8)


def test_ridge_constant_targets():
    x = rng.normal(size=(15, 3))
    model = fit_ridge(x, np.full(15, 4.2), l2=1e-3)
    assert np.allclose(model.predict(rng.normal(size=(5, 3))), 4.2, atol=1e-9)


def test_ridge_two_point_closed_form():
    # independent evaluation of the penalized normal equations on the
    # standardized design, then mapped back to predictions
    x = np.array([[1.0], [2.0]])
    y = np.array([3.0, 6.0])
    l2 = 1.0
    mu, sd = x.mean(), x.std()
    z = (x - mu) / sd
    beta = np.linalg.solve(z.T @ z + l2 * np.eye(1), z.T @ (y - y.mean()))
    expected = z @ beta + y.mean()
    model = fit_ridge(x, y, l2=l2)
    assert np.allclose(model.predict(x), expected, atol=1e-12)


def test_ridge_matches_gradient_descent():
    x = rng.normal(size=(40, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + rng.normal(0, 0.1, 40)
    l2 = 0.7
    model = fit_ridge(x, y, l2=l2)

    # plain gradient descent on the same standardized objective
    mu, sd = x.mean(axis=0), x.std(axis=0)
    z = (x - mu) / sd
    yc = y - y.mean()
    beta = np.zeros(3)
    lr = 1.0 / (np.linalg.eigvalsh(z.T @ z)[-1] + l2)
    for _ in range(20000):
        grad = z.T @ (z @ beta - yc) + l2 * beta
        beta -= lr * grad
    assert np.allclose(model.predict(x), z @ beta + y.mean(), atol=1e-8)


def test_ridge_rejects_nonfinite():
    with pytest.raises(ValueError):
        fit_ridge(np.array([[np.inf], [1.0]]), np.array([1.0, 2.0]), l2=0.1)


def test_ridge_underdetermined_is_fine_with_penalty():
    x = rng.normal(size=(3, 9))
    y = rng.normal(size=3)
    model = fit_ridge(x, y, l2=1.0)
    assert np.all(np.isfinite(model.predict(x)))


def test_predict_before_fit_raises():
    for model in (RidgeRegression(), GradientBoostedTrees(), MeanRegression(),):
        with pytest.raises(NotFittedError):
            model.predict(np.zeros((2, 2)))
    with pytest.raises(NotFittedError):
        LogisticModel().predict_proba(np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# logistic


def test_logistic_symmetric_data_centroid_probability():
    x = np.array([[-1.0], [1.0], [-2.0], [2.0]])
    y = np.array([0, 1, 0, 1])
    model = fit_logistic(x, y, l2=1e-2)
    assert model.predict_proba(np.array([[0.0]]))[0] == pytest.approx(0.5, abs=1e-6)


def test_logistic_separable_stays_finite():
    x = np.concatenate([rng.normal(-3, 0.3, 50), rng.normal(3, 0.3, 50)])[:, None]
    y = np.r_[np.zeros(50), np.ones(50)]
    model = fit_logistic(x, y, l2=1e-2)
    p = model.predict_proba(x)
    assert np.all(p > 0) and np.all(p < 1)
    assert np.all(np.isfinite(p))


def test_logistic_recovers_known_slope():
    r = np.random.default_rng(42)
    n = 10000
    x = r.normal(0, 1, (n, 1))
    p = 1 / (1 + np.exp(-2.0 * x[:, 0]))
    y = (r.random(n) < p).astype(float)
    model = fit_logistic(x, y, l2=1e-6)
    # slope in original units: beta / sd(x)
    slope = model._beta[1] / model._sd[0]
    assert slope == pytest.approx(2.0, abs=0.1)


def test_logistic_gradient_small_at_solution():
    r = np.random.default_rng(3)
    x = r.normal(size=(200, 3))
    y = (r.random(200) < 0.5).astype(float)
    model = fit_logistic(x, y, l2=1e-3, tol=1e-8)
    assert model.converged_
    assert model.grad_norm_ < 1e-8


def test_logistic_single_class_rejected():
    with pytest.raises(ValueError):
        fit_logistic(np.zeros((5, 1)), np.ones(5))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_logistic_gradient_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    n, p = 20, 3
    z1 = np.column_stack([np.ones(n), r.normal(size=(n, p))])
    y = (r.random(n) < 0.5).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    beta = r.normal(0, 0.5, p + 1)
    l2 = 0.3
    grad = logistic_gradient(beta, z1, y, l2)
    eps = 1e-6
    for j in range(p + 1):
        step = np.zeros(p + 1)
        step[j] = eps
        fd = (
            logistic_objective(beta + step, z1, y, l2)
            - logistic_objective(beta - step, z1, y, l2)
        ) / (2 * eps)
        assert grad[j] == pytest.approx(fd, abs=1e-5, rel=1e-4)


# ---------------------------------------------------------------------------
# gradient-boosted trees


def test_gbt_beats_constant_on_step_function():
    x = np.linspace(0, 1, 100)[:, None]
    y = (x[:, 0] > 0.5).astype(float)
    model = fit_gbt(x, y, trees=1, depth=1, learning_rate=1.0)
    resid_model = np.mean((y - model.predict(x)) ** 2)
    resid_const = np.mean((y - y.mean()) ** 2)
    assert resid_model < resid_const


def test_gbt_zero_learning_rate_predicts_mean():
    x = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    model = GradientBoostedTrees(trees=10, depth=2, learning_rate=0.0).fit(x, y)
    assert np.allclose(model.predict(x), y.mean())


def test_gbt_learns_xor_interaction():
    r = np.random.default_rng(7)
    x = r.random((600, 2))
    y = np.logical_xor(x[:, 0] > 0.5, x[:, 1] > 0.5).astype(float)
    model = fit_gbt(x, y, trees=100, depth=2, learning_rate=0.3)
    pred = model.predict(x)
    ss_res = np.sum((y - pred) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    assert 1 - ss_res / ss_tot > 0.9


def test_gbt_requires_data_and_valid_shape():
    with pytest.raises(ValueError):
        fit_gbt(np.zeros((0, 2)), np.zeros(0), trees=5, depth=2, learning_rate=0.1)
    with pytest.raises(ValueError):
        GradientBoostedTrees(trees=0)


def test_gbt_sample_weights_silence_rows():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 0.0, 100.0])
    w = np.array([1.0, 1.0, 1.0, 0.0])
    model = GradientBoostedTrees(trees=5, depth=1, learning_rate=1.0,
                                 min_leaf=1).fit(x, y, sample_weight=w)
    assert np.allclose(model.predict(x[:3]), 0.0, atol=1e-9)


# ---------------------------------------------------------------------------
# shared behavior


@pytest.mark.parametrize(
    "factory",
    [
        lambda: RidgeRegression(l2=0.01),
        lambda: GradientBoostedTrees(trees=30, depth=2, learning_rate=0.2,
                                     min_leaf=2),
        lambda: MeanRegression(),
    ],
)
def test_row_permutation_leaves_predictions_unchanged(factory):
    r = np.random.default_rng(11)
    x = r.normal(size=(80, 4))
    y = x @ np.array([1.0, 0.0, -1.0, 2.0]) + r.normal(0, 0.5, 80)
    perm = r.permutation(80)
    a = factory().fit(x, y)
    b = factory().fit(x[perm], y[perm])
    grid = r.normal(size=(25, 4))
    assert np.array_equal(a.predict(grid), b.predict(grid))


def test_logistic_permutation_invariance():
    r = np.random.default_rng(12)
    x = r.normal(size=(60, 3))
    y = (r.random(60) < 0.5).astype(float)
    y[0], y[1] = 0, 1
    perm = r.permutation(60)
    a = LogisticModel(l2=1e-3).fit(x, y)
    b = LogisticModel(l2=1e-3).fit(x[perm], y[perm])
    grid = r.normal(size=(10, 3))
    assert np.array_equal(a.predict_proba(grid), b.predict_proba(grid))
