import math

import numpy as np
import pytest

from conftest import random_spd
from latentdem.forward import PoseParam
from latentdem.oracle import (
    analytic_gaussian_posterior,
    convolution_matrix,
    dense_hqs_solve,
    mnc_bruteforce,
    pose_grid_search,
    simplex_project_bruteforce,
    spatial_convolve,
)
from latentdem.prior import GaussianPrior


def test_posterior_limits(rng):
    prior = GaussianPrior(rng.standard_normal(3), random_spd(rng, 3))
    y = rng.standard_normal(3)
    weak = analytic_gaussian_posterior(prior, np.eye(3), y, 1e6)
    np.testing.assert_allclose(weak.mean, prior.mean, atol=1e-9)
    np.testing.assert_allclose(weak.cov, prior.cov, atol=1e-9)
    strong = analytic_gaussian_posterior(prior, np.eye(3), y, 1e-6)
    np.testing.assert_allclose(strong.mean, y, atol=1e-9)


def test_posterior_importance_sampling_cross_check():
    rng = np.random.default_rng(11)
    prior = GaussianPrior(rng.standard_normal(4), random_spd(rng, 4))
    A = rng.standard_normal((2, 4))
    sigma = 1.5
    y = rng.standard_normal(2)
    post = analytic_gaussian_posterior(prior, A, y, sigma)
    n = 100_000
    x = prior.sample(rng, n)
    logw = -np.sum((y - x @ A.T) ** 2, axis=1) / (2 * sigma**2)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    est = w @ x
    ess = 1.0 / np.sum(w**2)
    se = np.sqrt(np.diag(post.cov) / ess)
    assert np.all(np.abs(est - post.mean) < 3 * se)


def test_convolution_matrix_matches_spatial_loop(rng):
    x = rng.random((5, 5))
    k = np.zeros((5, 5))
    k[:3, :3] = rng.random((3, 3))
    C = convolution_matrix(x)
    # C vec(Z) with Z on the full grid anchored at the origin
    Z = np.roll(k, (-1, -1), axis=(0, 1))
    np.testing.assert_allclose((C @ Z.ravel()).reshape(5, 5), spatial_convolve(x, k[:3, :3]), atol=1e-12)


def test_dense_hqs_limits(rng):
    y = rng.random((6, 6))
    d = np.zeros((6, 6))
    d[0, 0] = 1.0
    phi = np.full((3, 3), 1 / 9)
    np.testing.assert_allclose(dense_hqs_solve(y, d, phi, 1.0, 1e-12, crop=False), y, atol=1e-9)
    np.testing.assert_allclose(dense_hqs_solve(y, rng.random((6, 6)), phi, 1.0, 1e12), phi, atol=1e-6)


def test_pose_grid_search_cases():
    p, flat, vals = pose_grid_search(lambda a: (a - math.radians(40)) ** 2, 1.0)
    assert p.degrees == pytest.approx(40.0) and not flat and len(vals) == 360
    p, flat, _ = pose_grid_search(lambda a: 3.0, 1.0)
    assert flat
    p, flat, vals = pose_grid_search(lambda a: a, 360.0)
    assert len(vals) == 1 and p == PoseParam(0.0)
    with pytest.raises(ValueError):
        pose_grid_search(lambda a: a, 0.0)


def test_bruteforce_simplex_examples():
    np.testing.assert_allclose(simplex_project_bruteforce([0.8, -0.2, 0.4]), [0.7, 0.0, 0.3], atol=1e-15)
    np.testing.assert_allclose(simplex_project_bruteforce([1.0, 1.0]), [0.5, 0.5])
    with pytest.raises(ValueError):
        simplex_project_bruteforce(np.zeros(13))


def test_mnc_bruteforce_shift():
    a, b = np.zeros((4, 4)), np.zeros((4, 4))
    a[0, 0], b[3, 1] = 2.0, 5.0
    assert mnc_bruteforce(a, b) == pytest.approx(1.0)
