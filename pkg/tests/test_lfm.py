import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from physaware.core import InputError, RngStream
from physaware.criteria import lfm_oracle_error
from physaware.lfm import (
    LfmParams,
    MultiSeriesData,
    joint_gram,
    lfm_cross_cov,
    lfm_fit,
    lfm_latent_cross_cov,
    lfm_latent_posterior,
    lfm_predict,
    lfm_recovery_experiment,
    log_marginal,
)


def _params(g):
    return LfmParams(g.uniform(0.05, 1.0, 3), g.standard_normal((3, 2)), g.uniform(0.5, 4.0, 2),
                     np.full(3, 0.01))


@pytest.fixture(scope="module")
def small_fit():
    g = RngStream(3).generator()
    p = LfmParams([0.2, 0.1], [[1.0], [0.7]], [3.0], [0.01, 0.01])
    t = np.arange(0.0, 40.0, 1.0)
    idx = np.repeat([0, 1], t.size)
    K = joint_gram(p, idx, np.tile(t, 2)) + 0.01 * np.eye(2 * t.size)
    y = np.linalg.cholesky(K) @ g.standard_normal(2 * t.size)
    keep = (t < 15) | (t > 25)
    data = MultiSeriesData((t, t[keep]), (y[:t.size], y[t.size:][keep]))
    return p, data, t, keep


@settings(max_examples=25)
@given(seed=st.integers(0, 2**31))
def test_symmetry(seed):
    g = np.random.default_rng(seed)
    p = _params(g)
    t, t2 = g.uniform(0, 20, 2)
    assert lfm_cross_cov(p, 0, 2, t, t2) == pytest.approx(lfm_cross_cov(p, 2, 0, t2, t), rel=1e-10, abs=1e-14)


def test_cross_cov_matches_double_quadrature():
    assert lfm_oracle_error(RngStream(1).generator(), draws=15) < 1e-6


def test_auto_cov_matches_quadrature():
    p = LfmParams([0.3], [[1.3]], [2.0], [0.1])
    t, t2 = 4.0, 6.5

    def k(v2, v1):
        return np.exp(-0.3 * (t - v1) - 0.3 * (t2 - v2) - (v1 - v2) ** 2 / 4.0)

    ref = 1.3**2 * dblquad(k, 0, t, 0, t2, epsabs=1e-11, epsrel=1e-11)[0]
    assert float(lfm_cross_cov(p, 0, 0, t, t2)) == pytest.approx(ref, abs=1e-8)


def test_latent_cov_matches_quadrature():
    p = LfmParams([0.5], [[0.8]], [1.5], [0.1])
    for t, s in [(3.0, 1.0), (0.5, 4.0), (10.0, -2.0)]:
        ref = 0.8 * quad(lambda v: np.exp(-0.5 * (t - v) - (v - s) ** 2 / 1.5**2), 0, t,
                         epsabs=1e-13, epsrel=1e-13)[0]
        assert float(lfm_latent_cross_cov(p, 0, 0, t, s)) == pytest.approx(ref, abs=1e-8)


def test_joint_gram_psd():
    g = np.random.default_rng(4)
    for _ in range(10):
        p = _params(g)
        idx = g.integers(0, 3, 30)
        t = g.uniform(0, 30, 30)
        assert np.linalg.eigvalsh(joint_gram(p, idx, t)).min() >= -1e-8


def test_zero_sensitivity_latent_cov():
    p = LfmParams([0.5, 0.2], [[0.0], [1.0]], [1.5], [0.1, 0.1])
    assert np.all(lfm_latent_cross_cov(p, 0, 0, np.linspace(0, 5, 7), 2.0) == 0.0)


def test_latent_cov_decays():
    ell = 1.2
    p = LfmParams([0.4], [[1.0]], [ell], [0.1])
    t = 30.0
    s = np.linspace(0, t, 600)
    peak = np.abs(lfm_latent_cross_cov(p, 0, 0, t, s)).max()
    far = abs(float(lfm_latent_cross_cov(p, 0, 0, t, t + 10 * ell)))
    assert far < 1e-6 * peak


def test_gram_plan_matches_pairwise():
    g = np.random.default_rng(8)
    p = _params(g)
    idx = np.repeat([0, 1, 2], 6)
    t = np.tile(np.arange(6.0), 3)
    K = joint_gram(p, idx, t)
    K2 = joint_gram(p, idx, t, idx, t)
    np.testing.assert_allclose(K, K2, rtol=1e-10, atol=1e-12)


def test_params_validation():
    with pytest.raises(InputError):
        LfmParams([0.1, -1.0], [[1.0], [1.0]], [1.0], [0.1, 0.1])
    with pytest.raises(InputError):
        LfmParams([0.1], [[1.0, 1.0]], [1.0], [0.1])


def test_data_validation():
    with pytest.raises(InputError):
        MultiSeriesData(([0.0, 0.0],), ([1.0, 2.0],))
    with pytest.raises(InputError):
        MultiSeriesData(([0.0, np.inf],), ([1.0, 2.0],))
    with pytest.raises(InputError):
        MultiSeriesData(([],), ([],))


def test_predict_observed_close(small_fit):
    p, data, t, _ = small_fit
    m, v = lfm_predict(p, data, data.times[0], 0)
    # about 5% of a Gaussian falls outside 2 sd, so allow a few misses
    assert np.mean(np.abs(m - data.values[0]) < 2 * np.sqrt(v + p.noise[0])) >= 0.9


def test_gap_variance_larger(small_fit):
    p, data, t, keep = small_fit
    _, v = lfm_predict(p, data, t, 1)
    assert np.all(v > 0)
    assert v[~keep].min() > v[keep][1:-1].max()


def test_latent_posterior_without_data():
    p = LfmParams([0.2], [[1.0]], [3.0], [0.01])
    (m, v), = lfm_latent_posterior(p, None, np.linspace(0, 10, 5))
    assert np.all(m == 0) and np.all(v == 1)


def test_latent_variance_below_prior(small_fit):
    p, data, t, _ = small_fit
    (_, v), = lfm_latent_posterior(p, data, t)
    assert np.all(v <= 1.0)


def test_fit_not_below_start(small_fit):
    _, data, _, _ = small_fit
    fit = lfm_fit(data, 1, opt_budget=150, rng=RngStream(0), n_starts=2)
    assert fit.log_marginal >= fit.start_values.max() - 1e-9
    assert fit.log_marginal == pytest.approx(log_marginal(fit.params, data), rel=1e-9)


def test_tiny_sensitivity_predicts_sample_mean():
    g = np.random.default_rng(2)
    t = np.arange(30.0)
    y = 3.0 + g.standard_normal(30)
    data = MultiSeriesData((t,), (y,))
    p = LfmParams([0.5], [[1e-8]], [2.0], [1.0])
    m, _ = lfm_predict(p, data, [5.5, 100.0], 0)
    # GLS mean with a near-zero force: constant offset plus the constant-force
    # response, whose least squares combination is the sample mean level
    np.testing.assert_allclose(m, y.mean(), atol=0.15)


def test_fit_rejects_large_data():
    t = np.arange(2001.0)
    with pytest.raises(InputError):
        lfm_fit(MultiSeriesData((t,), (np.zeros_like(t),)), 1)


def test_recovery_one_seed():
    out = lfm_recovery_experiment(RngStream(0, 0).generator(), opt_budget=900)
    assert np.all(np.abs(out["tau_hat"] / out["tau_true"] - 1) < 0.15)
    assert out["latent_corr"] >= 0.9
    assert out["gap_rmse_lfm"] < out["gap_rmse_gp"]
