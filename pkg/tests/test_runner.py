"""End-to-end runs of every filter kind on a scalar linear benchmark."""
import numpy as np
import pytest

from cdassim.filters.beliefs import GaussianBelief
from cdassim.filters.pf import ResamplePolicy
from cdassim.filters.runner import FilterConfig, FilterRunError, run_filter
from cdassim.sde import NoiseStream, SdeModel, simulate_path

from closedform import scalar_kalman

A, B_IN, SIGMA, R_OBS = 0.4, 0.2, 0.6, 0.25
M0, P0 = 0.0, 1.0


def ou_model(a=A, sigma=SIGMA):
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


def base_config(stream=None, **kw):
    return FilterConfig(initial=GaussianBelief(np.array([M0]), np.array([[P0]])),
                        obs_cov=np.array([[R_OBS]]), stream=stream, **kw)


@pytest.fixture(scope="module")
def ou_data():
    model = ou_model()
    stream = NoiseStream(4242)
    traj = simulate_path(model, np.array([0.5]), np.array([B_IN]), 0.0, 15.0, 0.05,
                         stream.child(0))
    idx = np.arange(10, len(traj), 10)
    rng = stream.child(1).generator()
    ys = traj.states[idx, 0] + np.sqrt(R_OBS) * rng.standard_normal(idx.size)
    return traj.times[idx], ys


def test_rejects_bad_requests(ou_data):
    times, ys = ou_data
    model = ou_model()
    cfg = base_config()
    with pytest.raises(ValueError):
        run_filter("kf", model, cfg, times, ys)
    with pytest.raises(ValueError):
        run_filter("ekf", model, cfg, times[::-1], ys)
    with pytest.raises(ValueError):
        run_filter("ekf", model, cfg, times, ys[:-1])
    with pytest.raises(ValueError):
        run_filter("enkf", model, cfg, times, ys)  # no stream configured


def test_zero_measurements_returns_initial_belief():
    model = ou_model()
    for kind in ("ekf", "ukf", "enkf", "pf"):
        cfg = base_config(stream=NoiseStream(1))
        out = run_filter(kind, model, cfg, [], np.zeros((0, 1)))
        assert out.n_steps == 0
        assert out.final_belief() is cfg.initial


def test_gaussian_filters_match_closed_form(ou_data):
    times, ys = ou_data
    model = ou_model()
    oracle = scalar_kalman(A, B_IN, SIGMA, R_OBS, M0, P0, times, ys)
    tols = {"ekf": (1e-8, 1e-8), "ukf": (5e-3, 1e-2)}
    for kind, (mean_atol, var_rtol) in tols.items():
        out = run_filter(kind, model, base_config(), times, ys, u=np.array([B_IN]))
        assert out.n_steps == times.size
        assert np.allclose(out.prior_mean[:, 0], oracle["prior_mean"], atol=mean_atol)
        assert np.allclose(out.post_mean[:, 0], oracle["post_mean"], atol=mean_atol)
        assert np.allclose(out.post_cov[:, 0, 0], oracle["post_var"], rtol=var_rtol)
        assert np.all(out.nis > 0.0)
        assert np.all(out.gain_condition == 1.0)
        assert np.all(out.step_seconds >= 0.0)


def test_sample_filters_track_closed_form(ou_data):
    times, ys = ou_data
    model = ou_model()
    oracle = scalar_kalman(A, B_IN, SIGMA, R_OBS, M0, P0, times, ys)
    for kind, cfg in (
        ("enkf", base_config(stream=NoiseStream(2024, 1), ensemble_size=4000)),
        ("pf", base_config(stream=NoiseStream(2024, 2), particle_count=4000)),
    ):
        out = run_filter(kind, model, cfg, times, ys, u=np.array([B_IN]))
        assert np.allclose(out.post_mean[:, 0], oracle["post_mean"], atol=0.06)
        assert np.allclose(out.post_cov[:, 0, 0], oracle["post_var"], rtol=0.2)
    assert np.all(out.ess > 100.0)  # the linear problem keeps the PF healthy


def test_enkf_run_is_reproducible_and_seed_sensitive(ou_data):
    times, ys = ou_data
    model = ou_model()
    a = run_filter("enkf", model, base_config(stream=NoiseStream(5), ensemble_size=50),
                   times, ys, u=np.array([B_IN]))
    b = run_filter("enkf", model, base_config(stream=NoiseStream(5), ensemble_size=50),
                   times, ys, u=np.array([B_IN]))
    c = run_filter("enkf", model, base_config(stream=NoiseStream(6), ensemble_size=50),
                   times, ys, u=np.array([B_IN]))
    assert np.array_equal(a.post_mean, b.post_mean)
    assert np.array_equal(a.post_cov, b.post_cov)
    assert not np.array_equal(a.post_mean, c.post_mean)


def test_pf_summary_flag_switches_reported_posterior(ou_data):
    times, ys = ou_data
    model = ou_model()

    def make(flag):
        return base_config(stream=NoiseStream(7), particle_count=300,
                           resample=ResamplePolicy("always"),
                           pf_resampled_summary=flag)

    weighted = run_filter("pf", model, make(False), times, ys, u=np.array([B_IN]))
    resampled = run_filter("pf", model, make(True), times, ys, u=np.array([B_IN]))
    # identical particle evolution, different reported summaries
    assert np.array_equal(weighted.innovation, resampled.innovation)
    assert np.array_equal(weighted.ess, resampled.ess)
    assert not np.array_equal(weighted.post_mean, resampled.post_mean)


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.filterwarnings("ignore:invalid value")
def test_failures_carry_step_information():
    model = SdeModel(
        dim_state=1, dim_noise=1, dim_obs=1,
        drift=lambda t, x, u: x**3,
        diffusion=lambda t, x, u: np.zeros((1, 1)),
        measure=lambda t, x: x,
    )
    cfg = FilterConfig(initial=GaussianBelief(np.array([50.0]), np.array([[1.0]])),
                       obs_cov=np.array([[1.0]]), stream=NoiseStream(8),
                       ensemble_size=4, substeps=5)
    with pytest.raises(FilterRunError) as err:
        run_filter("enkf", model, cfg, [1.0], [[0.0]])
    assert err.value.kind == "enkf"
    assert err.value.step == 0
    assert "failed at step 0" in str(err.value)


def test_config_validation():
    good = dict(initial=GaussianBelief(np.zeros(1), np.ones((1, 1))),
                obs_cov=np.array([[1.0]]))
    with pytest.raises(ValueError):
        FilterConfig(substeps=0, **good)
    with pytest.raises(ValueError):
        FilterConfig(ensemble_size=1, **good)
    with pytest.raises(ValueError):
        FilterConfig(particle_count=0, **good)
    with pytest.raises(ValueError):
        FilterConfig(initial=good["initial"], obs_cov=np.array([[1.0, 0.5], [0.0, 1.0]]))
