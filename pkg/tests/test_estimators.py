import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ellmix.errors import DegenerateCloudError, DomainError
from ellmix.estimators import (FitConfig, backfit_step, fit_backfit, fit_direct, frobenius_error)
from ellmix.model import EllipsoidParams
from ellmix.radial import JTable, sigma_star_factor
from ellmix.sampler import sample_ellipsoid

from _oracles import fibonacci_sphere, unit_circle


def test_unit_circle_direct_fit():
    x = unit_circle(360)
    est = fit_direct(x)
    np.testing.assert_allclose(est.mu, 0.0, atol=1e-12)
    np.testing.assert_allclose(est.sigma_mat, np.eye(2), atol=1e-3)
    assert est.noise_sigma**2 < 1e-6


def test_unit_sphere_backfit_fixed_point():
    x = fibonacci_sphere(2000)
    est, rep = fit_backfit(x)
    np.testing.assert_allclose(est.mu, 0.0, atol=1e-12)
    np.testing.assert_allclose(est.sigma_mat, np.eye(3), atol=1e-3)
    assert est.noise_sigma < 1e-3
    assert rep.iterations <= 2


def test_unit_sphere_backfit_step_from_truth():
    x = fibonacci_sphere(500)
    cur = EllipsoidParams(np.zeros(3), np.eye(3), 0.01)
    new = backfit_step(x, None, cur)
    np.testing.assert_allclose(new.mu, 0.0, atol=1e-12)


def test_backfit_idempotent_at_fixed_point(preset3):
    cloud = sample_ellipsoid(preset3, 2000, 3)
    est, rep = fit_backfit(cloud)
    assert rep.converged
    again = backfit_step(cloud, None, est)
    assert np.linalg.norm(again.mu - est.mu) / (1 + np.linalg.norm(est.mu)) < 1e-9
    assert np.linalg.norm(again.sigma_mat - est.sigma_mat) / np.linalg.norm(est.sigma_mat) < 1e-9


def test_backfit_beats_empirical_mean(preset3):
    cloud = sample_ellipsoid(preset3, 10_000, 5)
    direct = fit_direct(cloud)
    est, rep = fit_backfit(cloud)
    assert rep.converged and rep.iterations >= 1
    assert np.linalg.norm(est.mu) < np.linalg.norm(direct.mu)
    assert np.linalg.norm(est.mu) < 0.1


def test_shape_estimate_targets_sigma_star(preset3):
    star = sigma_star_factor(3, 0.01) * preset3.sigma_mat
    rel = []
    for seed in range(50):
        est, _ = fit_backfit(sample_ellipsoid(preset3, 10_000, seed))
        rel.append(frobenius_error(est.sigma_mat, star) / np.linalg.norm(star))
    assert np.mean(np.array(rel) < 0.05) >= 0.9


def test_bias_correction_rescales_shape(preset3):
    cloud = sample_ellipsoid(preset3, 3000, 9)
    a, _ = fit_backfit(cloud)
    b, _ = fit_backfit(cloud, config=FitConfig(correct_bias=True))
    j = JTable.build(b.noise_sigma, 4)
    np.testing.assert_allclose(b.sigma_mat, a.sigma_mat * j[2] / j[4], rtol=1e-12)


def test_noise_estimate_consistent(preset3):
    errs = [abs(fit_backfit(sample_ellipsoid(preset3, 10_000, s))[0].noise_sigma - 0.01) / 0.01
            for s in range(30)]
    assert np.median(errs) < 0.1


def test_ones_weights_bitwise_equal_to_unweighted(preset3):
    cloud = sample_ellipsoid(preset3, 500, 1)
    a, ra = fit_backfit(cloud)
    b, rb = fit_backfit(cloud, np.ones(cloud.n))
    np.testing.assert_array_equal(a.mu, b.mu)
    np.testing.assert_array_equal(a.sigma_mat, b.sigma_mat)
    assert a.noise_sigma == b.noise_sigma and ra.iterations == rb.iterations


def test_zero_one_weights_equal_subset_fit(preset3):
    cloud = sample_ellipsoid(preset3, 600, 2)
    mask = np.arange(cloud.n) % 3 != 0
    a, _ = fit_backfit(cloud.points[mask])
    b, _ = fit_backfit(cloud, mask.astype(float))
    np.testing.assert_array_equal(a.mu, b.mu)
    np.testing.assert_array_equal(a.sigma_mat, b.sigma_mat)
    assert a.noise_sigma == b.noise_sigma


def test_degenerate_clouds():
    with pytest.raises(DegenerateCloudError):
        fit_direct(np.ones((10, 3)))
    planar = np.column_stack([np.random.default_rng(0).normal(size=(50, 2)), np.zeros(50)])
    with pytest.raises(DegenerateCloudError):
        fit_backfit(planar)
    with pytest.raises(DomainError):
        fit_direct(np.random.default_rng(0).normal(size=(3, 3)))
    with pytest.raises(DomainError):
        fit_direct(np.random.default_rng(0).normal(size=(10, 3)), weights=-np.ones(10))


def test_iteration_cap_reported_not_raised(preset3):
    cloud = sample_ellipsoid(preset3, 1000, 4)
    _, rep = fit_backfit(cloud, config=FitConfig(max_backfit_iters=3))
    assert rep.iterations == 3 and not rep.converged
    assert len(rep.delta_trace) == 3
    assert set(rep.to_dict()) >= {"iterations", "final_param_delta", "converged", "estimate"}


def test_two_dimensional_tilted_recovery():
    p = EllipsoidParams([5.0, -3.0], [[100.0**2, 50.0**2], [50.0**2, 50.0**2]], 0.01)
    est, _ = fit_backfit(sample_ellipsoid(p, 10_000, 6))
    assert np.linalg.norm(est.mu - p.mu) < 1.0
    star = sigma_star_factor(2, 0.01) * p.sigma_mat
    assert frobenius_error(est.sigma_mat, star) / np.linalg.norm(star) < 0.05


# --- properties ---------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(shift=arrays(float, 3, elements=st.floats(-1e3, 1e3)),
       scale=st.floats(0.1, 10.0), seed=st.integers(0, 2**32 - 1))
def test_prop_backfit_equivariant(shift, scale, seed):
    p = EllipsoidParams(np.zeros(3), np.diag([4.0, 2.0, 1.0]), 0.02)
    x = sample_ellipsoid(p, 300, seed).points
    a, _ = fit_backfit(x)
    b, _ = fit_backfit(scale * x + shift)
    np.testing.assert_allclose(b.mu, scale * a.mu + shift, rtol=1e-6, atol=1e-6 * scale * 10)
    np.testing.assert_allclose(b.sigma_mat, scale**2 * a.sigma_mat, rtol=1e-6, atol=1e-9 * scale**2)
    assert b.noise_sigma == pytest.approx(a.noise_sigma, rel=1e-5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), perm_seed=st.integers(0, 2**32 - 1))
def test_prop_direct_fit_permutation_invariant(seed, perm_seed):
    p = EllipsoidParams(np.zeros(2), np.diag([9.0, 1.0]), 0.05)
    x = sample_ellipsoid(p, 100, seed).points
    y = x[np.random.default_rng(perm_seed).permutation(100)]
    a, b = fit_direct(x), fit_direct(y)
    np.testing.assert_allclose(a.mu, b.mu, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.sigma_mat, b.sigma_mat, rtol=1e-10)
