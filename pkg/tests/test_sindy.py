import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physaware.core import InputError, RngStream
from physaware.sindy import (
    SparseOdeModel,
    discover,
    estimate_derivatives,
    mexico_rediscovery,
    moving_average,
    phase_portrait,
    stlsq,
)
from physaware.synth import mexico_system
from physaware.terms import TermLibrary, build_library


def test_linear_trajectory_constant_derivative():
    t = np.arange(20) * 0.1
    X = np.stack([3 * t + 1, -2 * t], 1)
    D = estimate_derivatives(X, 0.1)
    np.testing.assert_allclose(D, np.tile([3.0, -2.0], (20, 1)), atol=1e-12)


def test_sine_derivative():
    dt = 1e-3
    t = np.arange(0, 2 * np.pi, dt)
    D = estimate_derivatives(np.sin(t), dt)[:, 0]
    assert np.max(np.abs(D - np.cos(t))) < 1e-5


def test_window_one_is_identity(rng):
    x = rng.normal(size=(12, 2))
    np.testing.assert_array_equal(moving_average(x, 1), x)


def test_moving_average_constant_preserved():
    np.testing.assert_allclose(moving_average(np.full((9, 1), 2.5), 5), 2.5)


def test_derivative_errors():
    with pytest.raises(InputError):
        estimate_derivatives(np.zeros((4, 1)), 0.1)
    with pytest.raises(InputError):
        moving_average(np.zeros(10), 4)


def test_threshold_zero_is_lstsq(rng):
    Theta = rng.normal(size=(50, 6))
    Y = rng.normal(size=(50, 2))
    xi, empty = stlsq(Theta, Y, 0.0, 0.0)
    ref = np.linalg.lstsq(Theta, Y, rcond=None)[0]
    assert np.max(np.abs(xi - ref)) < 1e-8
    assert empty == ()


def test_planted_decay_with_decoys(rng):
    t = np.linspace(0, 3, 3001)
    x = 2.0 * np.exp(-t)
    Theta = np.column_stack([np.ones_like(t), x, x**2, np.sin(5 * t)])
    xdot = estimate_derivatives(x, t[1] - t[0])
    xi, _ = stlsq(Theta, xdot, 0.1)
    assert np.count_nonzero(xi) == 1
    assert abs(xi[1, 0] + 1.0) <= 1e-3


def test_empty_column_flagged(rng):
    Theta = rng.normal(size=(30, 3))
    xi, empty = stlsq(Theta, 1e-3 * rng.normal(size=(30, 1)), 1.0)
    assert empty == (0,)
    assert np.all(xi == 0)


def test_magnitude_invariant(rng):
    Theta = rng.normal(size=(40, 8))
    Y = Theta @ rng.normal(size=(8, 3)) + 0.1 * rng.normal(size=(40, 3))
    for thr in (0.1, 0.5, 1.0):
        xi, _ = stlsq(Theta, Y, thr)
        assert np.all((xi == 0) | (np.abs(xi) >= thr))


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31), thr=st.floats(0.05, 1.5))
def test_idempotent(seed, thr):
    g = np.random.default_rng(seed)
    Theta = g.normal(size=(40, 6))
    Y = Theta @ (g.normal(size=(6, 2)) * (g.uniform(size=(6, 2)) > 0.5)) + 0.05 * g.normal(size=(40, 2))
    xi, _ = stlsq(Theta, Y, thr)
    for j in range(2):
        active = xi[:, j] != 0
        if not active.any():
            continue
        sub, _ = stlsq(Theta[:, active], Y[:, j], thr)
        np.testing.assert_allclose(sub[:, 0], xi[active, j], rtol=1e-10, atol=1e-12)


def test_support_monotone_in_threshold(rng):
    Theta = rng.normal(size=(60, 10))
    Y = Theta @ rng.normal(size=(10, 2)) + 0.3 * rng.normal(size=(60, 2))
    prev = None
    for thr in np.linspace(0, 2.5, 26):
        sup = stlsq(Theta, Y, thr)[0] != 0
        if prev is not None:
            assert not np.any(sup & ~prev)
        prev = sup


def test_stlsq_validation():
    with pytest.raises(InputError):
        stlsq(np.eye(3), np.ones(3), -1.0)


def test_constant_state_gives_empty_model():
    m = discover(np.ones((50, 2)), 0.01, threshold=0.5)
    assert np.all(m.xi == 0)
    assert m.empty_columns == (0, 1)


def test_mexico_clean_rediscovery():
    out = mexico_rediscovery()
    assert out["support_exact"]
    assert out["max_rel_err"] <= 0.05
    assert out["model"].fit_r >= 0.99


def test_mexico_noisy_support():
    ok = sum(mexico_rediscovery(RngStream(0, s), noise_frac=0.01, smoothing_window=7)["support_exact"]
             for s in range(20))
    assert ok >= 16


def test_field_matches_printed_equations():
    sys = mexico_system()
    model = SparseOdeModel(sys.coefficients, sys.library, 5.0, 1.0)
    field, _ = phase_portrait(model, [[-0.1, 0.1]], [[-0.1, 0.1]], t1=0.01)
    x1, x2 = -0.1, 0.1
    expect = [-37.5 * x1 - 55.6 * x2 - 31.9 * x1 * x2, 67.2 * x1 + 44.8 * x2 - 74.0 * x1 * x2]
    np.testing.assert_allclose(field[0, 2:], expect, rtol=1e-12)


def test_zero_model_zero_field():
    lib = TermLibrary(2, 2)
    model = SparseOdeModel(np.zeros((len(lib), 2)), lib, 1.0, 0.0)
    G = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    field, trajs = phase_portrait(model, G, G[:2], t1=0.1)
    assert np.all(field[:, 2:] == 0)
    np.testing.assert_array_equal(trajs[0][-1], G[0])


def test_portrait_trajectories_finite_inside_box():
    sys = mexico_system()
    model = SparseOdeModel(sys.coefficients, sys.library, 5.0, 1.0)
    g = np.linspace(-0.2, 0.2, 5)
    starts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    _, trajs = phase_portrait(model, starts, starts, t1=0.05, bound=10.0)
    assert all(np.all(np.isfinite(tr)) for tr in trajs)


def test_mexico_origin_is_unstable_focus():
    # why long portraits are cut at a bound: trajectories spiral outwards
    sys = mexico_system()
    lib = sys.library
    J = np.array([[sys.coefficients[lib.index((1, 0)), j], sys.coefficients[lib.index((0, 1)), j]]
                  for j in range(2)])
    ev = np.linalg.eigvals(J)
    assert np.all(ev.real > 0) and np.all(ev.imag != 0)


def test_portrait_requires_2d():
    lib = TermLibrary(3, 1)
    with pytest.raises(InputError):
        phase_portrait(SparseOdeModel(np.zeros((len(lib), 3)), lib, 1.0, 0.0), [[0, 0, 0]], [[0, 0, 0]])


def test_equations_text():
    sys = mexico_system()
    model = SparseOdeModel(sys.coefficients, sys.library, 5.0, 1.0)
    eqs = model.equations(["PC1", "PC2"])
    assert eqs[0].startswith("dPC1/dt = -37.5*PC1")


def test_rhs_consistent_with_library(rng):
    lib = TermLibrary(2, 2)
    xi = rng.normal(size=(len(lib), 2))
    X = rng.normal(size=(7, 2))
    m = SparseOdeModel(xi, lib, 0.0, 0.0)
    np.testing.assert_allclose(m.rhs(X), build_library(X, lib) @ xi)
