import math

import numpy as np
import pytest

from oracles import (central_difference, mixture_loglik, mrsip_pi_maximizer, normal_equations,
                     normal_pdf, ols)
from semimix.errors import ComponentCollapseError
from semimix.mixlin import LinearMixtureParams, fit_mixlinreg
from semimix.mrsip import (PROPORTION_FLOOR, MrsipFit, _fit_linear, estep_mrsip, fit_mrsip,
                           index_loglik_mrsip, index_loglik_mrsip_gradient, mstep_pi,
                           predict_mrsip, profile_index_mrsip, update_beta_sigma)
from semimix.simlab import (EXAMPLE2_COEFFICIENTS, EXAMPLE2_VARIANCES, TRUE_INDEX,
                            gen_example2, match_components)
from semimix.smoothing import CurveSet, Grid, build_grid, interpolate_columns

LINEAR2 = LinearMixtureParams(np.array(EXAMPLE2_COEFFICIENTS, dtype=float),
                              np.array(EXAMPLE2_VARIANCES), None)


@pytest.fixture(scope="module")
def ex2_fit():
    data, truth = gen_example2(400, 77)
    return data, truth, fit_mrsip(data.X, data.y, 2, 0.103, seed=2)


def test_estep_identical_components():
    D = np.column_stack([np.ones(4), np.arange(4.0)])
    same = LinearMixtureParams(np.ones((3, 2)), np.ones(3), None)
    post = estep_mrsip(np.full((4, 3), 1 / 3), D, np.arange(4.0), same)
    np.testing.assert_allclose(post, 1 / 3, rtol=1e-15)


def test_estep_floored_proportion():
    D = np.ones((1, 1))
    lin = LinearMixtureParams(np.array([[0.0], [0.0]]), np.ones(2), None, intercept=False)
    post = estep_mrsip([[0.0, 1.0]], D, [0.0], lin)
    assert post[0, 0] == pytest.approx(PROPORTION_FLOOR, rel=1e-5)
    assert post.sum() == pytest.approx(1.0, abs=1e-15)


def test_estep_two_point_hand_instance():
    D = np.array([[1.0, 0.5], [1.0, -1.0]])
    y = np.array([1.2, -0.4])
    pi = np.array([[0.3, 0.7], [0.6, 0.4]])
    lin = LinearMixtureParams(np.array([[1.0, 0.5], [-1.0, 2.0]]), np.array([0.7, 0.6]), None)
    post = estep_mrsip(pi, D, y, lin)
    for i in range(2):
        a = pi[i, 0] * normal_pdf(y[i], D[i] @ lin.coefficients[0], 0.7)
        b = pi[i, 1] * normal_pdf(y[i], D[i] @ lin.coefficients[1], 0.6)
        assert post[i, 0] == pytest.approx(a / (a + b), rel=1e-12)


def test_mstep_pi_examples():
    rng = np.random.default_rng(0)
    z = rng.uniform(size=30)
    grid = build_grid(z, 8)
    const = mstep_pi(np.tile([0.3, 0.7], (30, 1)), z, grid, 0.2)
    np.testing.assert_allclose(const, np.tile([0.3, 0.7], (8, 1)), rtol=1e-14)
    single = mstep_pi([[0.25, 0.75]], [0.5], Grid(np.array([0.5, 0.6])), 0.1)
    np.testing.assert_allclose(single, [[0.25, 0.75]] * 2, rtol=1e-15)


def test_mstep_pi_step_shape():
    z = np.random.default_rng(1).uniform(size=400)
    post = np.column_stack([z < np.median(z), z >= np.median(z)]).astype(float)
    grid = build_grid(z, 100)
    pi = mstep_pi(post, z, grid, 0.02)
    low, high = grid.points < 0.4, grid.points > 0.6
    assert np.all(pi[low, 0] > 0.95) and np.all(pi[high, 0] < 0.05)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-15)
    assert np.all((pi >= 0) & (pi <= 1))


@pytest.mark.parametrize("instance", range(50))
def test_mstep_pi_maximizes_local_objective(instance):
    rng = np.random.default_rng(2000 + instance)
    z = rng.uniform(size=8)
    post = rng.dirichlet([1, 1], size=8)
    h = rng.uniform(0.1, 0.5)
    u = rng.uniform(0.1, 0.9)
    pi = mstep_pi(post, z, Grid(np.array([u, u + 0.1])), h)
    np.testing.assert_allclose(pi[0], mrsip_pi_maximizer(post, z, u, h), atol=1e-6)


def test_update_single_component_is_ols():
    rng = np.random.default_rng(3)
    D = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
    y = D @ [1.0, 2.0, -1.0] + rng.normal(size=40)
    coef, var = update_beta_sigma(np.ones((40, 1)), D, y)
    beta, s2 = ols(D, y)
    np.testing.assert_allclose(coef[0], beta, atol=1e-10)
    assert var[0] == pytest.approx(s2, rel=1e-10)


def test_update_hard_partition():
    rng = np.random.default_rng(4)
    D = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = rng.normal(size=30)
    split = np.arange(30) < 12
    coef, var = update_beta_sigma(np.column_stack([split, ~split]).astype(float), D, y)
    for j, rows in enumerate((split, ~split)):
        beta, s2 = ols(D[rows], y[rows])
        np.testing.assert_allclose(coef[j], beta, atol=1e-10)
        assert var[j] == pytest.approx(s2, rel=1e-10)


@pytest.mark.parametrize("instance", range(10))
def test_update_matches_normal_equations(instance):
    rng = np.random.default_rng(50 + instance)
    D = np.column_stack([np.ones(6), rng.normal(size=6)])
    y = rng.normal(size=6)
    post = rng.dirichlet([1, 1], size=6)
    coef, var = update_beta_sigma(post, D, y)
    for j in range(2):
        beta, s2 = normal_equations(D, y, post[:, j])
        np.testing.assert_allclose(coef[j], beta, rtol=1e-10, atol=1e-10)
        assert var[j] == pytest.approx(s2, rel=1e-10)
        rhs = D.T @ (post[:, j] * y)
        resid = D.T @ (post[:, j] * (y - D @ coef[j]))
        assert np.linalg.norm(resid) < 1e-8 * np.linalg.norm(rhs)


def test_update_singular_gram():
    D = np.column_stack([np.ones(5), np.arange(5.0)])
    post = np.zeros((5, 2))
    post[:, 0] = 1.0
    post[0] = [0.0, 1.0]
    with pytest.raises(ComponentCollapseError):
        update_beta_sigma(post, D, np.arange(5.0))


def random_proportions(rng, grid):
    return CurveSet(grid, rng.dirichlet([4, 4], size=grid.N))


def test_loglik_against_summation_oracle():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(12, 3))
    y = rng.normal(size=12)
    curves = random_proportions(rng, build_grid(X @ TRUE_INDEX, 10))
    pi = interpolate_columns(curves.grid, curves.proportions, X @ TRUE_INDEX)
    means = LINEAR2.design(X) @ LINEAR2.coefficients.T
    expected = mixture_loglik(y, means.tolist(), [EXAMPLE2_VARIANCES] * 12, pi.tolist())
    got = index_loglik_mrsip(TRUE_INDEX, X, y, curves, LINEAR2)
    assert got == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("point", range(20))
def test_index_gradient_matches_finite_differences(point):
    rng = np.random.default_rng(300 + point)
    data, _ = gen_example2(60, 400 + point)
    curves = random_proportions(rng, build_grid(data.X @ TRUE_INDEX, 30))
    alpha = TRUE_INDEX + 0.2 * rng.normal(size=3)
    alpha /= np.linalg.norm(alpha)
    fd = central_difference(lambda a: index_loglik_mrsip(a, data.X, data.y, curves, LINEAR2),
                            alpha)
    grad = index_loglik_mrsip_gradient(alpha, data.X, data.y, curves, LINEAR2)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_profile_with_flat_curves_returns_start():
    data, _ = gen_example2(100, 9)
    flat = CurveSet(build_grid([0.0, 2.0], 20), np.tile([0.4, 0.6], (20, 1)))
    start = np.array([0.2, 0.9, 0.3]) / np.linalg.norm([0.2, 0.9, 0.3])
    res = profile_index_mrsip(data.X, data.y, flat, LINEAR2, start)
    np.testing.assert_allclose(res.index, start, atol=1e-12)
    assert not res.improved


def test_linear_step_is_monotone():
    data, _ = gen_example2(300, 10)
    D = LINEAR2.design(data.X)
    curves = random_proportions(np.random.default_rng(1), build_grid(data.X @ TRUE_INDEX))
    pi = interpolate_columns(curves.grid, curves.proportions, data.X @ TRUE_INDEX)
    start = LinearMixtureParams(np.array([[0.0, 1, 1, 1], [0, -1, 1, 0]]), np.ones(2), None)
    _, trace = _fit_linear(D, data.y, pi, start, 1e-8, 200, 1e-12)
    trace = np.array(trace)
    assert trace.size > 5
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[1:]))


def test_fit_invariants(ex2_fit):
    data, _, fit = ex2_fit
    np.testing.assert_allclose(fit.posteriors.sum(axis=1), 1.0, atol=1e-10)
    props = fit.proportion_curves.proportions
    np.testing.assert_allclose(props.sum(axis=1), 1.0, atol=1e-10)
    assert np.all((props >= 0) & (props <= 1))
    assert np.all(fit.linear.variances > 0)
    assert np.linalg.norm(fit.index) == pytest.approx(1.0, abs=1e-12)
    assert fit.index[np.flatnonzero(fit.index)[0]] > 0
    assert fit.loglik == pytest.approx(
        index_loglik_mrsip(fit.index, data.X, data.y, fit.proportion_curves, fit.linear),
        rel=1e-12)


def test_constant_proportions_nested():
    rng = np.random.default_rng(11)
    avg, mix_coefs, mrsip_coefs = [], [], []
    for r in range(8):
        X = rng.uniform(size=(400, 3))
        lab = rng.uniform(size=400) < 0.4
        D = np.column_stack([np.ones(400), X])
        y = np.where(lab, D @ EXAMPLE2_COEFFICIENTS[0], D @ EXAMPLE2_COEFFICIENTS[1])
        y = y + np.sqrt(np.where(lab, 0.7, 0.6)) * rng.normal(size=400)
        fit = fit_mrsip(X, y, 2, 0.3, seed=r)
        perm = list(match_components(fit.linear.coefficients, EXAMPLE2_COEFFICIENTS))
        avg.append(fit.proportion_curves.proportions[:, perm[0]].mean())
        mrsip_coefs.append(fit.linear.coefficients[perm])
        mix = fit_mixlinreg(X, y, 2, seed=r)
        mix_coefs.append(mix.params.coefficients[list(
            match_components(mix.params.coefficients, EXAMPLE2_COEFFICIENTS))])
    avg = np.array(avg)
    se = avg.std(ddof=1) / np.sqrt(avg.size)
    assert abs(avg.mean() - 0.4) < 2 * se + 0.01
    assert np.abs(np.array(mrsip_coefs) - np.array(mix_coefs)).max() < 0.3


def make_fit(props, coefficients, variances):
    grid = Grid(np.array([0.0, 1.0]))
    lin = LinearMixtureParams(np.asarray(coefficients, dtype=float),
                              np.asarray(variances, dtype=float), None)
    return MrsipFit(np.array([1.0]), CurveSet(grid, np.asarray(props, dtype=float)), lin,
                    np.empty((0, lin.k)), 0.0, 0.1)


def test_predict_reductions():
    X = np.array([[0.2], [0.7]])
    one = make_fit([[1.0], [1.0]], [[0.5, 2.0]], [1.0])
    np.testing.assert_allclose(predict_mrsip(one, X).yhat, 0.5 + 2 * X[:, 0])
    np.testing.assert_allclose(predict_mrsip(one, X, [3.0, 4.0]).yhat, 0.5 + 2 * X[:, 0])
    degenerate = make_fit([[1.0, 0.0], [1.0, 0.0]], [[0.5, 2.0], [-3.0, 1.0]], [1.0, 1.0])
    np.testing.assert_allclose(predict_mrsip(degenerate, X).yhat, 0.5 + 2 * X[:, 0],
                               atol=1e-4)


def test_predict_with_y():
    fit = make_fit([[0.5, 0.5], [0.5, 0.5]], [[0.0, 0.0], [4.0, 0.0]], [1.0, 1.0])
    pred = predict_mrsip(fit, [[0.5]], [3.0])
    a, b = normal_pdf(3.0, 0.0, 1.0), normal_pdf(3.0, 4.0, 1.0)
    assert pred.yhat[0] == pytest.approx(4 * b / (a + b), rel=1e-12)
    assert pred.labels[0] == 1
    assert math.isclose(pred.posteriors.sum(), 1.0)
