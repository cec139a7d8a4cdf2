import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physaware.core import InputError, RngStream
from physaware.emulator import (
    AcquisitionConfig,
    EmulatorState,
    NoInformativeCandidate,
    acquisition_value,
    acquisition_values,
    emulator_rmse,
    eval_grid,
    lhs_sample,
    points_to_target,
    run_active_loop,
    select_next,
)
from physaware.synth import CAUSE_BOX, SyntheticRtm, rtm_forward


def _state(X):
    X = np.atleast_2d(np.asarray(X, float))
    return EmulatorState(X, rtm_forward(SyntheticRtm(), X[:, 0], X[:, 1])).refit()


@pytest.fixture(scope="module")
def state():
    return _state(lhs_sample(12, CAUSE_BOX, np.random.default_rng(3)))


def test_lhs_single_point_in_box():
    x = lhs_sample(1, CAUSE_BOX, np.random.default_rng(0))
    assert x.shape == (1, 2)
    assert np.all((x >= CAUSE_BOX[:, 0]) & (x <= CAUSE_BOX[:, 1]))


@settings(max_examples=30)
@given(n=st.integers(1, 1000), seed=st.integers(0, 2**32 - 1))
def test_lhs_stratified(n, seed):
    x = lhs_sample(n, CAUSE_BOX, np.random.default_rng(seed))
    u = (x - CAUSE_BOX[:, 0]) / (CAUSE_BOX[:, 1] - CAUSE_BOX[:, 0])
    for k in range(2):
        bins = np.minimum((u[:, k] * n).astype(int), n - 1)
        assert np.array_equal(np.sort(bins), np.arange(n))


def test_lhs_deterministic():
    a = lhs_sample(20, CAUSE_BOX, RngStream(5))
    b = lhs_sample(20, CAUSE_BOX, RngStream(5))
    assert np.array_equal(a, b)


def test_lhs_rejects_empty():
    with pytest.raises(InputError):
        lhs_sample(0, CAUSE_BOX, RngStream(0))


def test_acquisition_zero_at_training(state):
    cfg = AcquisitionConfig()
    vals = acquisition_values(state, cfg, state.train_inputs)
    assert np.all(vals == 0.0)


def test_acquisition_positive_elsewhere(state):
    X = eval_grid(15)
    d = np.min(np.abs(X[:, None, :] - state.train_inputs[None]).sum(-1), 1)
    assert np.all(acquisition_values(state, AcquisitionConfig(), X[d > 1e-6]) > 0)


def test_beta_zero_is_sd(state):
    X = eval_grid(9)
    _, sd = state.predict(X)
    np.testing.assert_array_equal(acquisition_values(state, AcquisitionConfig(beta=0.0), X), sd)


def test_acquisition_grows_with_distance_single_point():
    centre = CAUSE_BOX.mean(1)
    s = _state(np.vstack([centre, centre + [1.0, 0.1]]))
    s.train_inputs, s.train_outputs = s.train_inputs[:1], s.train_outputs[:1]
    s._alpha = s._alpha[:1]
    s._chol = np.ones((1, 1)) * np.sqrt(1 + 1e-8)
    ell = np.exp(s.log_lengthscales[0]) * (CAUSE_BOX[0, 1] - CAUSE_BOX[0, 0])
    r = np.linspace(0, 3 * ell, 40)
    X = centre + np.outer(r, [1.0, 0.0])
    X = X[(X[:, 0] <= CAUSE_BOX[0, 1])]
    a = acquisition_values(s, AcquisitionConfig(), X)
    assert np.all(np.diff(a) > 0)


def test_acquisition_value_scalar(state):
    x = np.array([40.0, 3.0])
    assert acquisition_value(state, AcquisitionConfig(), x) == pytest.approx(
        acquisition_values(state, AcquisitionConfig(), x[None])[0])


def test_config_validation():
    with pytest.raises(InputError):
        AcquisitionConfig(beta=1.5)
    with pytest.raises(InputError):
        AcquisitionConfig(candidate_pool=10)


def test_select_next_is_argmax(state):
    cfg = AcquisitionConfig(candidate_pool=200)
    C = np.random.default_rng(1).uniform(CAUSE_BOX[:, 0], CAUSE_BOX[:, 1], (200, 2))
    x = select_next(state, cfg, RngStream(0), candidates=C)
    a = acquisition_values(state, cfg, C)
    i = int(np.flatnonzero((C == x).all(1))[0])
    assert a[i] == a.max()
    assert acquisition_value(state, cfg, x) == pytest.approx(a.max(), rel=1e-12)


def test_select_next_degenerate(state):
    cfg = AcquisitionConfig(candidate_pool=100)
    C = np.repeat(state.train_inputs[:1], 100, axis=0)
    # resampling draws fresh uniform points, which are informative
    x = select_next(state, cfg, RngStream(0), candidates=C)
    assert acquisition_value(state, cfg, x) > 0

    class Flat(EmulatorState):
        def predict(self, X):
            return np.zeros((len(np.atleast_2d(X)), 1)), np.zeros(len(np.atleast_2d(X)))

    flat = Flat(state.train_inputs, state.train_outputs)
    with pytest.raises(NoInformativeCandidate):
        select_next(flat, cfg, RngStream(0), candidates=C)


def test_select_leaves_cluster():
    outside = 0
    for seed in range(20):
        g = RngStream(9, seed).generator()
        centre = CAUSE_BOX[:, 0] + g.uniform(0.3, 0.7, 2) * np.ptp(CAUSE_BOX, 1)
        X = centre + 0.03 * np.ptp(CAUSE_BOX, 1) * g.standard_normal((8, 2))
        X = np.clip(X, CAUSE_BOX[:, 0], CAUSE_BOX[:, 1])
        s = _state(X)
        x = select_next(s, AcquisitionConfig(), g)
        ell = np.exp(s.log_lengthscales)
        dist = np.sqrt((((s.unit(x) - s.unit(centre)) / ell) ** 2).sum())
        outside += dist > 1.0
    assert outside >= 18


def test_active_loop_curve():
    grid = eval_grid(25)
    curve = run_active_loop(SyntheticRtm(), AcquisitionConfig(), 5, 20, grid, RngStream(2))
    ns = [n for n, _ in curve]
    assert ns == list(range(5, 21))
    r = np.array([e for _, e in curve])
    assert np.all(np.isfinite(r))
    assert r[-1] < r[0]


def test_active_loop_stop_rmse():
    grid = eval_grid(20)
    cfg = AcquisitionConfig(stop_rmse=1.0)
    curve = run_active_loop(SyntheticRtm(), cfg, 5, 30, grid, RngStream(2))
    assert len(curve) == 1


def test_amogape_smoothed_mostly_decreasing():
    # refits move between likelihood modes, so whole-curve monotonicity is
    # not claimed; the 3-point smoothed curve must go down almost everywhere
    grid = eval_grid(70)
    fracs = []
    for r in range(8):
        curve = run_active_loop(SyntheticRtm(), AcquisitionConfig(), 5, 60, grid, RngStream(0, r))
        e = np.array([c[1] for c in curve])
        sm = np.convolve(e, np.ones(3) / 3, mode="valid")
        fracs.append(np.mean(np.diff(sm) <= 0))
        assert sm[-1] < 0.05 * sm[0]
    assert np.mean(fracs) >= 0.8
    assert min(fracs) >= 0.7


def test_active_loop_rejects_small_init():
    with pytest.raises(InputError):
        run_active_loop(SyntheticRtm(), AcquisitionConfig(), 3, 10, eval_grid(5), RngStream(0))


def test_unknown_method():
    with pytest.raises(InputError):
        run_active_loop(SyntheticRtm(), AcquisitionConfig(), 4, 6, eval_grid(5), RngStream(0), method="sobol")


def test_methods_share_initial_design():
    grid = eval_grid(15)
    first = {m: run_active_loop(SyntheticRtm(), AcquisitionConfig(), 5, 5, grid, RngStream(1), m)[0]
             for m in ("amogape", "random", "lhs")}
    assert len(set(first.values())) == 1


def test_points_to_target():
    curve = [(5, 0.3), (6, 0.1), (7, 0.01)]
    assert points_to_target(curve, 0.1, 10) == 6
    assert points_to_target(curve, 1e-4, 10) == 11


def test_interpolates_training_data(state):
    truth = state.train_outputs
    assert emulator_rmse(state, state.train_inputs, truth) < 1e-3 * np.abs(truth).max()


def test_prediction_sd_shrinks_at_data(state):
    _, sd_train = state.predict(state.train_inputs)
    _, sd_far = state.predict(eval_grid(10))
    assert sd_train.max() < 1e-2 * sd_far.max()
