import math

import numpy as np
import pytest

from oracles import central_difference, mixture_loglik, msim_local_maximizer, normal_pdf
from semimix.errors import ShapeError, StarvedNeighborhoodError
from semimix.msim import (estep_msim, fit_msim, index_loglik_msim, index_loglik_msim_gradient,
                          mstep_msim, predict_msim, profile_index_msim, run_modified_em)
from semimix.simlab import TRUE_INDEX, gen_example1, rase
from semimix.sir import index_angle
from semimix.smoothing import CurveSet, Grid, Kernel, build_grid


@pytest.fixture(scope="module")
def ex1_fit():
    data, truth = gen_example1(800, 41)
    return data, truth, fit_msim(data.X, data.y, 2, 0.091, seed=1)


def test_estep_identical_components():
    y = np.array([0.3, -1.0, 4.0])
    post = estep_msim(y, np.full((3, 2), 0.5), np.zeros((3, 2)), np.ones((3, 2)))
    np.testing.assert_array_equal(post, 0.5)
    np.testing.assert_array_equal(estep_msim(y, np.ones((3, 1)), np.zeros((3, 1)),
                                             np.ones((3, 1))), 1.0)


def test_estep_distant_components_in_log_space():
    post = estep_msim([0.0], [[0.3, 0.7]], [[0.0, 10.0]], [[1.0, 1.0]])
    # log odds of the far component: log(0.7/0.3) - 50
    p2 = 1 / (1 + math.exp(50 - math.log(0.7 / 0.3)))
    assert post[0, 1] == pytest.approx(p2, rel=1e-12)
    assert 1 - post[0, 0] == pytest.approx(4.5e-22, rel=0.05)
    far = estep_msim([0.0], [[0.5, 0.5]], [[1e3, -1e3]], [[1.0, 1.0]])
    np.testing.assert_allclose(far, 0.5)


def test_mstep_tiny_instance_by_hand():
    z = np.array([0.1, 0.4, 0.5, 0.9])
    y = np.array([1.0, 2.0, -1.0, 0.5])
    post = np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5], [1.0, 0.0]])
    grid = Grid(np.array([0.3, 0.6]))
    cs = mstep_msim(post, z, y, grid, 0.25)
    K = [math.exp(-0.5 * ((zi - 0.3) / 0.25) ** 2) for zi in z]
    for j in range(2):
        w = [K[i] * post[i, j] for i in range(4)]
        m = sum(w[i] * y[i] for i in range(4)) / sum(w)
        v = sum(w[i] * (y[i] - m) ** 2 for i in range(4)) / sum(w)
        assert cs.proportions[0, j] == pytest.approx(sum(w) / sum(K), rel=1e-12)
        assert cs.means[0, j] == pytest.approx(m, rel=1e-12)
        assert cs.variances[0, j] == pytest.approx(v, rel=1e-12)


@pytest.mark.parametrize("instance", range(50))
def test_mstep_maximizes_local_objective(instance):
    rng = np.random.default_rng(1000 + instance)
    n = 8
    z = rng.uniform(size=n)
    y = rng.normal(size=n) * 2
    post = rng.dirichlet([1, 1], size=n)
    h = rng.uniform(0.1, 0.5)
    u = rng.uniform(0.1, 0.9)
    cs = mstep_msim(post, z, y, Grid(np.array([u, u + 0.1])), h)
    pi, m, v = msim_local_maximizer(post, z, y, u, h)
    np.testing.assert_allclose(cs.proportions[0], pi, atol=1e-6)
    np.testing.assert_allclose(cs.means[0], m, atol=1e-6)
    np.testing.assert_allclose(cs.variances[0], v, atol=1e-6)


def test_mstep_single_component_and_flat_limit():
    rng = np.random.default_rng(3)
    z = rng.uniform(size=50)
    y = np.sin(3 * z) + 0.1 * rng.normal(size=50)
    grid = build_grid(z, 10)
    cs = mstep_msim(np.ones((50, 1)), z, y, grid, 0.1)
    np.testing.assert_allclose(cs.proportions, 1.0, rtol=0, atol=1e-15)
    K = np.exp(-0.5 * ((z[None, :] - grid.points[:, None]) / 0.1) ** 2)
    nw = K @ y / K.sum(axis=1)
    np.testing.assert_allclose(cs.means[:, 0], nw, rtol=1e-12)
    post = rng.dirichlet([1, 1], size=50)
    flat = mstep_msim(post, z, y, grid, 1e6)
    np.testing.assert_allclose(flat.means, np.tile(post.T @ y / post.sum(0), (10, 1)),
                               rtol=1e-8)


def test_mstep_starved():
    with pytest.raises(StarvedNeighborhoodError) as info:
        mstep_msim(np.ones((2, 1)), [0.0, 0.1], [1.0, 2.0], Grid(np.array([0.0, 5.0])), 0.1,
                   Kernel.EPANECHNIKOV)
    assert info.value.grid_point == 5.0


def test_mstep_invariants():
    data, _ = gen_example1(300, 5)
    z = data.X @ TRUE_INDEX
    post = np.random.default_rng(0).dirichlet([1, 1], size=300)
    cs = mstep_msim(post, z, data.y, build_grid(z), 0.1)
    assert cs.means.min() >= data.y.min() and cs.means.max() <= data.y.max()
    assert np.all(cs.variances > 0)
    np.testing.assert_allclose(cs.proportions.sum(axis=1), 1.0, atol=1e-10)


def test_estep_after_mstep_is_self_consistent():
    data, _ = gen_example1(200, 6)
    z = data.X @ TRUE_INDEX
    post = np.random.default_rng(1).dirichlet([1, 1], size=200)
    cs = mstep_msim(post, z, data.y, build_grid(z), 0.12)
    first = estep_msim(data.y, *cs.at(z))
    second = estep_msim(data.y, *cs.at(z))
    np.testing.assert_allclose(second, first, rtol=0, atol=1e-12)
    np.testing.assert_allclose(first.sum(axis=1), 1.0, atol=1e-10)


def test_constant_truth_recovered():
    grid = build_grid([0.0, 1.0])
    curves = []
    for r in range(20):
        rng = np.random.default_rng(r)
        z = rng.uniform(size=300)
        y = 2 + 0.5 * rng.normal(size=300)
        curves.append(run_modified_em(z, y, 0.1, grid, np.ones((300, 1))).curves.means[:, 0])
    curves = np.array(curves)
    se = curves.std(axis=0, ddof=1) / np.sqrt(len(curves))
    assert np.all(np.abs(curves.mean(axis=0) - 2) < 2 * se)


def random_curves(rng, grid, k=2):
    return CurveSet(grid, rng.dirichlet([3] * k, size=grid.N),
                    rng.normal(size=(grid.N, k)) + np.arange(k) * 2,
                    rng.uniform(0.3, 1.0, size=(grid.N, k)))


def test_loglik_against_summation_oracle():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(15, 3))
    y = rng.normal(size=15)
    curves = random_curves(rng, build_grid(X @ TRUE_INDEX, 12))
    pi, m, v = curves.at(X @ TRUE_INDEX)
    expected = mixture_loglik(y, m.tolist(), v.tolist(), pi.tolist())
    assert index_loglik_msim(TRUE_INDEX, X, y, curves) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("point", range(20))
def test_index_gradient_matches_finite_differences(point):
    rng = np.random.default_rng(200 + point)
    X = rng.uniform(size=(40, 3))
    y = rng.normal(size=40) + 1
    curves = random_curves(rng, build_grid(X @ TRUE_INDEX, 30))
    alpha = TRUE_INDEX + 0.2 * rng.normal(size=3)
    alpha /= np.linalg.norm(alpha)
    fd = central_difference(lambda a: index_loglik_msim(a, X, y, curves), alpha)
    grad = index_loglik_msim_gradient(alpha, X, y, curves)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_profile_never_decreases_objective():
    data, _ = gen_example1(300, 8)
    start = np.array([0.7, 0.5, 0.5]) / np.linalg.norm([0.7, 0.5, 0.5])
    z = data.X @ TRUE_INDEX
    em = run_modified_em(z, data.y, 0.1, build_grid(z),
                         np.random.default_rng(2).dirichlet([1, 1], size=300))
    res = profile_index_msim(data.X, data.y, em.curves, start)
    assert res.objective >= res.start_objective
    assert res.objective >= index_loglik_msim(start, data.X, data.y, em.curves)
    assert np.linalg.norm(res.index) == pytest.approx(1.0, abs=1e-12)
    assert res.index[np.flatnonzero(res.index)[0]] > 0


def test_scalar_covariate_reduces_to_modified_em():
    rng = np.random.default_rng(9)
    x = rng.uniform(size=(250, 1))
    lab = rng.uniform(size=250) < 0.5
    y = np.where(lab, np.sin(2 * np.pi * x[:, 0]), 3 + x[:, 0]) + 0.3 * rng.normal(size=250)
    fib = fit_msim(x, y, 2, 0.1, seed=3)
    one = fit_msim(x, y, 2, 0.1, mode="one-step", seed=3)
    np.testing.assert_array_equal(fib.index, [1.0])
    np.testing.assert_array_equal(fib.curves.means, one.curves.means)
    again = run_modified_em(x[:, 0], y, 0.1, build_grid(x[:, 0]), fib.posteriors)
    assert again.curves.max_abs_change(fib.curves) < 1e-4


def test_fit_invariants_and_label_coherence(ex1_fit):
    data, _, fit = ex1_fit
    assert np.linalg.norm(fit.index) == pytest.approx(1.0, abs=1e-12)
    assert fit.index[0] > 0
    np.testing.assert_allclose(fit.posteriors.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(fit.curves.proportions.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(fit.curves.variances > 0)
    # true curves move at most about 0.04 per grid step; a label swap jumps by more than 1
    assert np.abs(np.diff(fit.curves.means, axis=0)).max() < 0.3
    assert np.degrees(index_angle(fit.index, TRUE_INDEX)) < 5


def test_predict_labels_match_generating_components(ex1_fit):
    data, truth, fit = ex1_fit
    labels = predict_msim(fit, data.X, data.y).labels
    agree = np.mean(labels == truth.labels)
    assert max(agree, 1 - agree) > 0.95


def test_predict_reductions():
    grid = Grid(np.array([0.0, 1.0]))
    one = CurveSet(grid, np.ones((2, 1)), np.array([[1.0], [3.0]]), np.ones((2, 1)))
    fit = fit_stub(one)
    X = np.array([[0.25], [0.5]])
    np.testing.assert_allclose(predict_msim(fit, X).yhat, [1.5, 2.0])
    np.testing.assert_allclose(predict_msim(fit, X, [9.0, -9.0]).yhat, [1.5, 2.0])
    two = CurveSet(grid, np.full((2, 2), 0.5), np.array([[1.0, 5.0], [1.0, 5.0]]),
                   np.ones((2, 2)))
    np.testing.assert_allclose(predict_msim(fit_stub(two), X).yhat, 3.0)
    with pytest.raises(ShapeError):
        predict_msim(fit, np.ones((2, 3)))


def fit_stub(curves):
    from semimix.msim import MsimFit
    return MsimFit(np.array([1.0]), curves, np.empty((0, curves.k)), 0.0, 0.1)


def test_predict_with_y_uses_responsibilities():
    grid = Grid(np.array([0.0, 1.0]))
    cs = CurveSet(grid, np.full((2, 2), 0.5), np.array([[0.0, 4.0], [0.0, 4.0]]),
                  np.ones((2, 2)))
    pred = predict_msim(fit_stub(cs), np.array([[0.5]]), [3.0])
    a, b = 0.5 * normal_pdf(3.0, 0.0, 1.0), 0.5 * normal_pdf(3.0, 4.0, 1.0)
    assert pred.yhat[0] == pytest.approx(4 * b / (a + b), rel=1e-12)
    assert pred.labels[0] == 1


@pytest.mark.xfail(strict=True, reason=(
    "the published one-step RASE_m (0.118) is computed on a grid that evidently excludes "
    "the sparse tails of the index; with a Gaussian local-constant fit evaluated on a "
    "grid spanning the full index range, boundary bias alone gives about 0.3"))
def test_one_step_curve_accuracy_at_true_index():
    values = []
    for r in range(20):
        data, truth = gen_example1(400, 300 + r)
        fit = fit_msim(data.X, data.y, 2, 0.108, mode="one-step", init_index=TRUE_INDEX,
                       seed=r)
        values.append(rase(fit.curves, truth, "m"))
    assert np.mean(values) == pytest.approx(0.118, abs=0.05)
