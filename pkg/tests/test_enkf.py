"""Ensemble Kalman filter: RK4 propagation, analysis algebra, full runs."""
import numpy as np
import pytest

from pidm.enkf import EnkfConfig, Ensemble, analysis, rk4_step, run_filter
from pidm.errors import FilterDivergence
from pidm.integrator import dp45_rollout, dp45_step
from pidm.systems import SYSTEMS, SystemSpec


class ExponentialSystem(SystemSpec):
    """dx/dt = k x; RK4 must reproduce the degree-4 Taylor polynomial."""

    name = "exp1d"
    dim = 1
    param_names = ("k",)
    id_ranges = ((1.0, 1.0),)
    ood_ranges = ((1.0, 1.0),)
    amp_bound = 1e12

    def _field_parts(self, c, p):
        (x,) = c
        (k,) = p
        return (k * x,)

    def sample_initial(self, rng, params, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(0.5, 1.5, size=shape)


@pytest.fixture(scope="module")
def lorenz_truth():
    sys_ = SYSTEMS["lorenz"]
    params = sys_.nominal_params()
    truth = dp45_rollout(sys_, sys_.nominal_initial(), params, 120).data
    return sys_, params, truth


def test_rk4_matches_taylor4_on_exponential():
    sys_ = ExponentialSystem()
    h = 0.1
    out = rk4_step(sys_, np.array([1.0]), np.array([1.0]), h)
    taylor4 = 1.0 + h + h**2 / 2 + h**3 / 6 + h**4 / 24
    assert out[0] == pytest.approx(taylor4, abs=1e-15)
    # the leading truncation term of RK4 on exp is h^5/120
    assert abs(out[0] - np.exp(h)) == pytest.approx(h**5 / 120, rel=0.05)


def test_rk4_batch_matches_loop():
    sys_ = SYSTEMS["lorenz"]
    params = sys_.nominal_params()
    rng = np.random.default_rng(0)
    states = rng.uniform(-10, 10, (6, 3))
    batched = rk4_step(sys_, states, params, 0.01)
    rows = np.stack([rk4_step(sys_, states[i], params, 0.01) for i in range(6)])
    np.testing.assert_array_equal(batched, rows)


def test_rk4_per_member_params():
    sys_ = SYSTEMS["lorenz"]
    rng = np.random.default_rng(1)
    states = rng.uniform(-10, 10, (4, 3))
    params = np.tile(sys_.nominal_params(), (4, 1))
    params[2] *= 1.2
    batched = rk4_step(sys_, states, params, 0.01)
    np.testing.assert_array_equal(batched[0], rk4_step(sys_, states[0], params[0], 0.01))
    np.testing.assert_array_equal(batched[2], rk4_step(sys_, states[2], params[2], 0.01))


def test_rk4_agrees_with_dp45_where_both_are_exact_enough():
    sys_ = SYSTEMS["lorenz"]
    params = sys_.nominal_params()
    small = np.array([1e-3, 2e-3, -1e-3])
    diff = np.abs(rk4_step(sys_, small, params, 1e-3) - dp45_step(sys_, small, params, 1e-3))
    assert diff.max() < 1e-12
    attractor = np.array([-6.5, -7.3, 22.0])
    diff = np.abs(rk4_step(sys_, attractor, params, 0.01) - dp45_step(sys_, attractor, params, 0.01))
    assert diff.max() < 1e-2


def test_rk4_derivative_clipping_keeps_step_finite():
    sys_ = SYSTEMS["lorenz"]
    params = sys_.nominal_params()
    huge = np.array([1e8, -1e8, 1e8])
    out = rk4_step(sys_, huge, params, 0.05, deriv_clip=1e6)
    assert np.all(np.isfinite(out))
    # one step can move each coordinate at most dt * clip
    assert np.max(np.abs(out - huge)) <= 0.05 * 1e6 + 1e-9


def test_rk4_rejects_nonpositive_dt():
    sys_ = SYSTEMS["lorenz"]
    with pytest.raises(ValueError):
        rk4_step(sys_, np.zeros(3), sys_.nominal_params(), 0.0)


def test_ensemble_views():
    members = np.array([[1.0, 2.0], [3.0, 6.0]])
    ens = Ensemble(members)
    np.testing.assert_array_equal(ens.mean, [2.0, 4.0])
    np.testing.assert_array_equal(ens.anomalies, [[-1.0, -2.0], [1.0, 2.0]])


def test_analysis_huge_r_leaves_ensemble_untouched():
    rng = np.random.default_rng(2)
    members = rng.standard_normal((40, 3)) * 2.0
    y = np.full(3, 1e3)
    post = analysis(members, y, np.full(3, 1e12), np.random.default_rng(3), inflation=1.0, reg_eps=0.0)
    # perturbed-observation noise scales with sqrt(R), so the residual
    # shift is O(sqrt(R) * P / R) rather than exactly zero
    np.testing.assert_allclose(post, members, rtol=0, atol=1e-3)


def test_analysis_tiny_r_snaps_to_observation():
    rng = np.random.default_rng(4)
    members = rng.standard_normal((40, 3)) * 2.0
    y = np.array([5.0, -1.0, 2.0])
    post = analysis(members, y, np.full(3, 1e-12), np.random.default_rng(5), inflation=1.0, reg_eps=1e-12)
    np.testing.assert_allclose(post, np.tile(y, (40, 1)), rtol=0, atol=1e-4)


def test_analysis_scalar_gain_formula():
    rng = np.random.default_rng(6)
    n = 20000
    members = 1.0 + 2.0 * rng.standard_normal((n, 1))
    y = np.array([4.0])
    r = 1.0
    post = analysis(members, y, np.array([r]), np.random.default_rng(7), inflation=1.0, reg_eps=0.0)
    p_hat = members.var(ddof=1)
    k = p_hat / (p_hat + r)
    want_shift = k * (y[0] - members.mean())
    got_shift = post.mean() - members.mean()
    assert got_shift == pytest.approx(want_shift, rel=0.05)


def test_analysis_inflation_scales_anomalies():
    rng = np.random.default_rng(8)
    members = rng.standard_normal((500, 2))
    post = analysis(
        members, np.zeros(2), np.full(2, 1e12), np.random.default_rng(9), inflation=1.05, reg_eps=0.0
    )
    prior_std = members.std(axis=0)
    post_std = post.std(axis=0)
    np.testing.assert_allclose(post_std / prior_std, 1.05, rtol=1e-5)
    np.testing.assert_allclose(post.mean(axis=0), members.mean(axis=0), atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        EnkfConfig(n_members=1).validate()
    with pytest.raises(ValueError):
        EnkfConfig(inflation=0.9).validate()
    EnkfConfig().validate()


def test_filter_dense_noiseless_tracks_truth(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(len(truth))
    cfg = EnkfConfig(prop_dt=sys_.dt)
    res = run_filter(
        sys_, idx, truth, params, len(truth), cfg, np.random.default_rng(0),
        r_diag=np.full(3, 1e-6),
    )
    rmse = float(np.sqrt(np.mean((res.estimate - truth) ** 2)))
    assert rmse < 0.01
    assert res.reinit_count == 0
    assert len(res.analysis_records) == len(truth)


def test_filter_sparse_noisy_beats_observations(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(0, len(truth), 5)
    rng = np.random.default_rng(1)
    obs = truth[idx] + 0.5 * rng.standard_normal((len(idx), 3))
    cfg = EnkfConfig(prop_dt=sys_.dt, sigma_obs=0.5)
    res = run_filter(sys_, idx, obs, params, len(truth), cfg, np.random.default_rng(2))
    rmse_filter = float(np.sqrt(np.mean((res.estimate[idx] - truth[idx]) ** 2)))
    rmse_obs = float(np.sqrt(np.mean((obs - truth[idx]) ** 2)))
    assert rmse_filter < rmse_obs


def test_filter_analysis_improves_fit_to_observation(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(0, len(truth), 5)
    rng = np.random.default_rng(3)
    obs = truth[idx] + 0.5 * rng.standard_normal((len(idx), 3))
    cfg = EnkfConfig(prop_dt=sys_.dt, sigma_obs=0.5)
    res = run_filter(sys_, idx, obs, params, len(truth), cfg, np.random.default_rng(4))
    wins = [
        np.linalg.norm(r["mean_analysis"] - r["y"]) < np.linalg.norm(r["mean_forecast"] - r["y"])
        for r in res.analysis_records
    ]
    assert np.mean(wins) >= 0.8


def test_filter_deterministic(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(0, len(truth), 10)
    obs = truth[idx]
    cfg = EnkfConfig(prop_dt=sys_.dt)
    a = run_filter(sys_, idx, obs, params, len(truth), cfg, np.random.default_rng(5))
    b = run_filter(sys_, idx, obs, params, len(truth), cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(a.estimate, b.estimate)
    assert a.rmse_obs == b.rmse_obs


def test_filter_x0_defaults_to_earliest_observation(lorenz_truth):
    sys_, params, truth = lorenz_truth
    # indices intentionally unsorted; the earliest time wins
    idx = np.array([30, 10, 50])
    obs = truth[idx]
    cfg = EnkfConfig(prop_dt=sys_.dt, n_members=5)
    a = run_filter(sys_, idx, obs, params, 60, cfg, np.random.default_rng(6))
    b = run_filter(
        sys_, idx, obs, params, 60, cfg, np.random.default_rng(6), x0_mean=truth[10]
    )
    np.testing.assert_array_equal(a.estimate, b.estimate)


def test_filter_requires_initialization():
    sys_ = SYSTEMS["lorenz"]
    cfg = EnkfConfig()
    with pytest.raises(ValueError):
        run_filter(sys_, np.array([], dtype=int), np.zeros((0, 3)), sys_.nominal_params(), 10, cfg, np.random.default_rng(0))


def test_filter_rmse_obs_field(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(0, len(truth), 10)
    obs = truth[idx]
    cfg = EnkfConfig(prop_dt=sys_.dt)
    res = run_filter(sys_, idx, obs, params, len(truth), cfg, np.random.default_rng(7))
    want = float(np.sqrt(np.mean((res.estimate[idx] - obs) ** 2)))
    assert res.rmse_obs == pytest.approx(want, rel=1e-12)


def test_filter_divergence_raised():
    sys_ = SYSTEMS["lorenz"]
    cfg = EnkfConfig(n_members=4, prop_dt=0.05)
    with pytest.raises(FilterDivergence):
        run_filter(
            sys_, np.array([], dtype=int), np.zeros((0, 3)), sys_.nominal_params(), 10, cfg,
            np.random.default_rng(0), x0_mean=np.full(3, np.inf),
        )


def test_state_clip_bounds_member_norms():
    sys_ = SYSTEMS["rabinovich"]
    params = sys_.nominal_params()
    truth = dp45_rollout(sys_, sys_.nominal_initial(), params, 40).data
    cfg = EnkfConfig(prop_dt=sys_.dt, state_clip=50.0, sigma_init=0.5)
    res = run_filter(
        sys_, np.array([0]), truth[:1], params, 41, cfg, np.random.default_rng(8)
    )
    assert np.all(np.isfinite(res.estimate))
    assert np.max(np.linalg.norm(res.estimate, axis=1)) <= 50.0 + 1e-9


def test_rabinovich_filter_stays_sane():
    sys_ = SYSTEMS["rabinovich"]
    params = sys_.nominal_params()
    truth = dp45_rollout(sys_, sys_.nominal_initial(), params, 80).data
    idx = np.arange(0, 81, 4)
    rng = np.random.default_rng(9)
    obs = truth[idx] + 0.02 * rng.standard_normal((len(idx), 3))
    cfg = EnkfConfig(prop_dt=sys_.dt, sigma_init=0.2, sigma_obs=0.02, state_clip=50.0)
    res = run_filter(sys_, idx, obs, params, 81, cfg, np.random.default_rng(10))
    rmse = float(np.sqrt(np.mean((res.estimate - truth) ** 2)))
    assert np.isfinite(rmse)
    assert rmse < 1.0
    assert res.member_abs_max <= 60.0


def test_augmented_mode_with_zero_param_noise_keeps_params(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(0, len(truth), 5)
    obs = truth[idx]
    cfg = EnkfConfig(prop_dt=sys_.dt, augment_params=True, param_noise_frac=0.0)
    res = run_filter(sys_, idx, obs, params, len(truth), cfg, np.random.default_rng(11))
    np.testing.assert_allclose(res.param_estimate, params, rtol=0, atol=1e-9)


def test_augmented_mode_updates_params(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(0, len(truth), 2)
    obs = truth[idx]
    cfg = EnkfConfig(prop_dt=sys_.dt, augment_params=True, param_noise_frac=0.3)
    res = run_filter(sys_, idx, obs, params, len(truth), cfg, np.random.default_rng(12))
    assert res.param_estimate is not None
    assert res.param_estimate.shape == params.shape
    assert np.all(np.isfinite(res.param_estimate))
    assert not np.allclose(res.param_estimate, params)
    # with dense accurate observations the analysis should contract the
    # parameter spread rather than inflate it
    widths = np.array([hi - lo for lo, hi in sys_.id_ranges])
    assert np.all(np.abs(res.param_estimate - params) < 2.0 * widths)


def test_oracle_mode_has_no_param_estimate(lorenz_truth):
    sys_, params, truth = lorenz_truth
    idx = np.arange(0, 30, 5)
    cfg = EnkfConfig(prop_dt=sys_.dt)
    res = run_filter(sys_, idx, truth[idx], params, 30, cfg, np.random.default_rng(13))
    assert res.param_estimate is None
