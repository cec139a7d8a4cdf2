import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from physaware.core import (
    CholeskyError,
    Dataset,
    InputError,
    KernelConfig,
    Provenance,
    RngStream,
    chol_solve,
    cholesky,
    gp_log_marginal,
    gp_posterior,
    gram,
    kernel_eval,
    loo_log_density,
    loo_predictive,
)
from physaware.criteria import loo_oracle_error


def test_kernel_eval_at_zero_distance():
    assert kernel_eval(KernelConfig([1.0, 2.0], 3.0), [0.5, 0.5], [0.5, 0.5]) == pytest.approx(3.0)


def test_kernel_eval_hand_value():
    # exp(-0.5 * (1/2)^2) for a unit step at lengthscale 2
    k = kernel_eval(KernelConfig([2.0]), [0.0], [1.0])
    assert k == pytest.approx(np.exp(-0.125), abs=1e-15)


@given(arrays(float, (6, 2), elements=st.floats(-5, 5)))
def test_gram_symmetric_and_psd(X):
    K = gram(KernelConfig([0.7, 1.3], 2.0), X)
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_gram_matches_kernel_eval(rng):
    cfg = KernelConfig([0.5, 2.0], 1.5)
    X, Y = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    K = gram(cfg, X, Y)
    ref = np.array([[kernel_eval(cfg, x, y) for y in Y] for x in X])
    np.testing.assert_allclose(K, ref, rtol=1e-12)


def test_gram_rejects_wrong_dimension():
    with pytest.raises(InputError):
        gram(KernelConfig([1.0, 1.0]), np.zeros((3, 3)))


@pytest.mark.parametrize("bad", [[0.0], [-1.0], [np.nan]])
def test_kernel_config_validation(bad):
    with pytest.raises(InputError):
        KernelConfig(bad)


def test_cholesky_reconstructs(rng):
    A = rng.normal(size=(5, 5))
    A = A @ A.T + 5 * np.eye(5)
    L = cholesky(A, jitter=0.0)
    np.testing.assert_allclose(L @ L.T, A, atol=1e-12)
    assert np.allclose(np.triu(L, 1), 0)


def test_cholesky_reports_pivot():
    A = np.diag([1.0, 2.0, -1.0, 4.0])
    with pytest.raises(CholeskyError) as exc:
        cholesky(A, jitter=0.0)
    assert exc.value.pivot == 2


def test_chol_solve(rng):
    A = rng.normal(size=(4, 4))
    A = A @ A.T + np.eye(4)
    b = rng.normal(size=4)
    np.testing.assert_allclose(A @ chol_solve(A, b, jitter=0.0), b, atol=1e-10)


def test_loo_matches_refit_oracle():
    assert loo_oracle_error(np.random.default_rng(1), n_sets=5) < 1e-8


def test_loo_rejects_nonpositive_noise():
    with pytest.raises(InputError):
        loo_predictive(np.eye(3), 0.0, np.ones(3))


def test_loo_log_density_mask(rng):
    K = gram(KernelConfig([1.0]), rng.uniform(size=(6, 1)))
    y = rng.normal(size=6)
    mask = np.array([1, 0, 1, 0, 1, 1], bool)
    full = loo_log_density(K, 0.1, y)
    part = loo_log_density(K, 0.1, y, mask) + loo_log_density(K, 0.1, y, ~mask)
    assert full == pytest.approx(part)


def test_log_marginal_against_scipy(rng):
    from scipy.stats import multivariate_normal

    X = rng.uniform(size=(7, 1))
    K = gram(KernelConfig([0.3]), X)
    y = rng.normal(size=7)
    ref = multivariate_normal(np.zeros(7), K + 0.2 * np.eye(7)).logpdf(y)
    assert gp_log_marginal(K, 0.2, y) == pytest.approx(ref, rel=1e-10)


def test_posterior_variance_shrinks_at_data(rng):
    cfg = KernelConfig([0.5])
    X = np.linspace(0, 1, 5)[:, None]
    y = np.sin(X[:, 0])
    Xq = np.array([[0.5], [5.0]])
    mean, var, _ = gp_posterior(gram(cfg, X), 1e-4, y, gram(cfg, Xq, X), np.ones(2))
    assert var[0] < 1e-3 < var[1]
    assert mean[0] == pytest.approx(np.sin(0.5), abs=1e-2)


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.zeros((3, 2)), np.zeros(2), np.zeros(3))
    with pytest.raises(InputError):
        Dataset(np.zeros((2, 1)), [0.0, np.nan], [0, 0])
    with pytest.raises(InputError):
        Dataset(np.zeros((2, 1)), [0.0, 1.0], [0, 7])


def test_dataset_concat_and_subset():
    a = Dataset(np.zeros((2, 1)), [1.0, 2.0], Provenance.REAL)
    b = Dataset(np.ones((3, 1)), [3.0, 4.0, 5.0], Provenance.SIMULATED)
    c = Dataset.concat(a, Dataset.empty(1), b)
    assert len(c) == 5 and c.is_real.sum() == 2
    assert c.subset([0, 4]).targets.tolist() == [1.0, 5.0]


def test_rng_stream_replay_and_independence():
    a = RngStream(7, 3).generator().random(5)
    b = RngStream(7, 3).generator().random(5)
    c = RngStream(7, 4).generator().random(5)
    d = RngStream(7, 3).child(0).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_rng_stream_seed_range(seed):
    with pytest.raises(InputError):
        RngStream(seed)
