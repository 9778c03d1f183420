"""Tests for the sigma-point machinery and the unscented filter steps."""
import numpy as np
import pytest

from cdassim.filters.beliefs import GaussianBelief
from cdassim.filters.kalman import ekf_predict, kalman_update
from cdassim.filters.unscented import UkfScaling, ukf_predict, ukf_sigma_points, ukf_update
from cdassim.sde import SdeModel

from closedform import ou_transition


def scalar_ou(a=1.0, sigma=0.0):
    return SdeModel(
        dim_state=1,
        dim_noise=1,
        dim_obs=1,
        drift=lambda t, x, u: -a * x + u,
        diffusion=lambda t, x, u: np.array([[sigma]]),
        measure=lambda t, x: x,
        drift_jacobian=lambda t, x, u: np.array([[-a]]),
        measure_jacobian=lambda t, x: np.array([[1.0]]),
    )


def test_scaling_validation():
    with pytest.raises(ValueError):
        UkfScaling(alpha=0.0)
    with pytest.raises(ValueError):
        UkfScaling(kappa=-1.0)


def test_unit_scaling_single_state_points():
    # n = 1, alpha = 1, kappa = 0: points {0, +1, -1}, mean weights {0, 1/2, 1/2}
    sp = ukf_sigma_points(GaussianBelief(np.zeros(1), np.ones((1, 1))), UkfScaling())
    assert sp.count == 3
    assert np.allclose(sp.points, [[0.0, 1.0, -1.0]])
    assert np.allclose(sp.mean_weights, [0.0, 0.5, 0.5])
    assert sp.noise_points is None


def test_small_alpha_augmented_weights():
    # four states plus one noise coordinate at alpha 0.2: 11 points, center
    # mean weight (c - nbar)/c = -24, all others 1/(2c) = 2.5
    sp = ukf_sigma_points(GaussianBelief(np.zeros(4), np.eye(4)),
                          UkfScaling(0.2, 2.0, 0.0), noise_dim=1, dt_total=10.0)
    assert sp.count == 11
    assert sp.mean_weights[0] == pytest.approx(-24.0)
    assert np.allclose(sp.mean_weights[1:], 2.5)
    assert sp.cov_weights[0] == pytest.approx(-24.0 + 1.0 - 0.2**2 + 2.0)
    assert np.allclose(sp.cov_weights[1:], 2.5)
    # noise coordinates live on the fifth +/- pair only, at sqrt(c * dt)
    assert sp.noise_points.shape == (1, 11)
    spread = np.sqrt(0.2 * 10.0)
    expected = np.zeros(11)
    expected[5], expected[10] = spread, -spread
    assert np.allclose(sp.noise_points[0], expected)


def test_sigma_points_reconstruct_moments():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((3, 3))
    P = A @ A.T + 0.5 * np.eye(3)
    m = rng.standard_normal(3)
    for scaling in (UkfScaling(), UkfScaling(0.5, 2.0, 1.0), UkfScaling(0.2, 2.0, 0.0)):
        sp = ukf_sigma_points(GaussianBelief(m, P), scaling)
        assert np.allclose(sp.mean(), m, atol=1e-12)
        assert np.allclose(sp.covariance(), P, atol=1e-9)


def test_requires_positive_interval_for_noise_augmentation():
    belief = GaussianBelief(np.zeros(1), np.ones((1, 1)))
    with pytest.raises(ValueError):
        ukf_sigma_points(belief, UkfScaling(), noise_dim=1, dt_total=0.0)


def test_transform_mean_exact_for_quadratic():
    # weighted mean of the x -> x^2 images is m^2 + P for any scaling
    m, P = 0.7, 0.3
    for scaling in (UkfScaling(), UkfScaling(0.3, 2.0, 0.5)):
        sp = ukf_sigma_points(GaussianBelief(np.array([m]), np.array([[P]])), scaling)
        val = (sp.points[0] ** 2) @ sp.mean_weights
        assert val == pytest.approx(m * m + P, rel=1e-12)


def test_transform_mean_accurate_for_sine():
    # E sin(x) = sin(m) exp(-P/2) for Gaussian x; kappa = 2 matches the
    # fourth moment, leaving an O(P^3) error
    m, P = 0.7, 0.25
    sp = ukf_sigma_points(GaussianBelief(np.array([m]), np.array([[P]])),
                          UkfScaling(1.0, 2.0, 2.0))
    val = np.sin(sp.points[0]) @ sp.mean_weights
    assert val == pytest.approx(np.sin(m) * np.exp(-P / 2.0), rel=1e-3)


def test_predict_matches_moment_ode_for_linear_sde():
    model = scalar_ou(a=1e-3, sigma=1.0)
    belief = GaussianBelief(np.array([2.0]), np.array([[0.5]]))
    u = np.array([0.01])
    by_ode = ekf_predict(model, belief, u, 0.1, substeps=10)
    by_points = ukf_predict(model, belief, u, 0.1, UkfScaling(), substeps=10)
    assert by_points.mean[0] == pytest.approx(by_ode.mean[0], rel=1e-10)
    assert by_points.cov[0, 0] == pytest.approx(by_ode.cov[0, 0], rel=1e-8)


def test_predict_pure_diffusion_is_exact():
    pred = ukf_predict(
        scalar_ou(a=0.0, sigma=0.7), GaussianBelief(np.zeros(1), 0.25 * np.ones((1, 1))),
        np.zeros(1), 2.0, UkfScaling(), substeps=7)
    assert pred.mean[0] == pytest.approx(0.0, abs=1e-15)
    assert pred.cov[0, 0] == pytest.approx(0.25 + 0.7**2 * 2.0, rel=1e-12)


def test_predict_time_handling():
    belief = GaussianBelief(np.ones(1), np.ones((1, 1)), time=1.0)
    assert ukf_predict(scalar_ou(), belief, None, 1.0, UkfScaling()) is belief
    with pytest.raises(ValueError):
        ukf_predict(scalar_ou(), belief, None, 0.5, UkfScaling())


def test_predict_applies_constraint_to_points():
    model = SdeModel(
        dim_state=1, dim_noise=1, dim_obs=1,
        drift=lambda t, x, u: -5.0 * x,
        diffusion=lambda t, x, u: np.zeros((1, 1)),
        measure=lambda t, x: x,
        constrain=lambda x: np.maximum(x, 0.5),
    )
    pred = ukf_predict(model, GaussianBelief(np.ones(1), 0.01 * np.ones((1, 1))),
                       None, 2.0, UkfScaling())
    assert pred.mean[0] == pytest.approx(0.5)
    assert pred.cov[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_update_matches_kalman_for_linear_measure():
    rng = np.random.default_rng(3)
    n, ny = 3, 2
    A = rng.standard_normal((n, n))
    P = A @ A.T + 0.3 * np.eye(n)
    C = rng.standard_normal((ny, n))
    B = rng.standard_normal((ny, ny))
    R = B @ B.T + 0.2 * np.eye(ny)
    y = rng.standard_normal(ny)
    model = SdeModel(
        dim_state=n, dim_noise=n, dim_obs=ny,
        drift=lambda t, x, u: np.zeros(n),
        diffusion=lambda t, x, u: np.eye(n),
        measure=lambda t, x: C @ x,
        measure_jacobian=lambda t, x: C,
    )
    belief = GaussianBelief(rng.standard_normal(n), P)
    for scaling in (UkfScaling(), UkfScaling(0.9, 2.0, 0.3)):
        u_post, u_e, u_Re = ukf_update(belief, model, y, R, scaling)
        k_post, k_e, k_Re = kalman_update(belief, model, y, R)
        assert np.allclose(u_post.mean, k_post.mean, atol=1e-8)
        assert np.allclose(u_post.cov, k_post.cov, atol=1e-8)
        assert np.allclose(u_e, k_e, atol=1e-10)
        assert np.allclose(u_Re, k_Re, atol=1e-8)


def test_update_weakly_nonlinear_against_sampling_oracle():
    # brute-force Bayes rule on a dense prior sample as the reference
    rng = np.random.default_rng(5)
    m0, P0, R, y = 0.2, 0.09, 0.04, 0.5

    def h(x):
        return x + 0.1 * x**2

    xs = m0 + np.sqrt(P0) * rng.standard_normal(400_000)
    logw = -0.5 * (y - h(xs)) ** 2 / R
    w = np.exp(logw - logw.max())
    w /= w.sum()
    mean_mc = float(w @ xs)
    var_mc = float(w @ (xs - mean_mc) ** 2)

    model = SdeModel(
        dim_state=1, dim_noise=1, dim_obs=1,
        drift=lambda t, x, u: np.zeros(1),
        diffusion=lambda t, x, u: np.eye(1),
        measure=lambda t, x: h(x),
    )
    post, _, _ = ukf_update(GaussianBelief(np.array([m0]), np.array([[P0]])),
                            model, np.array([y]), np.array([[R]]),
                            UkfScaling(1.0, 2.0, 2.0))
    assert post.mean[0] == pytest.approx(mean_mc, abs=0.006)
    assert post.cov[0, 0] == pytest.approx(var_mc, rel=0.12)
