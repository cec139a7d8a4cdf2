import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from physaware.core import Dataset, InputError, RngStream, gram
from physaware.fkl import (
    DependenceWeightError,
    centering,
    default_input_kernel,
    fkl_benchmark,
    fkl_consistency_curve,
    fkl_fit,
    hsic,
    max_dep_weight,
    normalized_hsic,
    sensitive_gram,
    system_residual,
    tune_dep_fraction,
)
from physaware.synth import make_ocean_dataset


def test_hsic_constant_is_zero():
    assert abs(hsic([1.0, 2.0, 5.0], [3.0, 3.0, 3.0])) < 1e-12


def test_hsic_self_dependence_positive():
    assert hsic([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) > 0


def test_hsic_three_samples_by_hand():
    a, b = np.array([0.0, 1.0, 3.0]), np.array([2.0, -1.0, 0.5])
    # linear kernels: trace(a a' H b b' H) = (a_c . b_c)^2 with centred vectors
    ac, bc = a - a.mean(), b - b.mean()
    assert hsic(a, b) == pytest.approx((ac @ bc) ** 2 / 4, abs=1e-14)


vec = arrays(float, 6, elements=st.floats(-10, 10))


@given(vec, vec, st.permutations(range(6)))
def test_hsic_nonnegative_and_joint_permutation(a, b, perm):
    v = hsic(a, b)
    assert v >= -1e-12
    assert hsic(a[list(perm)], b[list(perm)]) == pytest.approx(v, abs=1e-9 * (1 + abs(v)))


def test_hsic_count_mismatch():
    with pytest.raises(InputError):
        hsic([1.0, 2.0], [1.0, 2.0, 3.0])


def test_normalized_hsic_bounds():
    a = np.arange(5.0)
    assert normalized_hsic(a, 2 * a + 1) == pytest.approx(1.0)


@pytest.fixture
def ocean():
    train, outputs, truth = make_ocean_dataset(RngStream(1), 40, ratio_noise=0.02)
    return train, outputs, truth


def test_zero_weight_is_krr(ocean):
    train, outputs, _ = ocean
    m = fkl_fit(train, outputs[:, 2], 0.5, 0.0)
    K = gram(m.k_in, train.inputs)
    y = train.targets - train.targets.mean()
    alpha = np.linalg.solve(K + 0.5 * np.eye(len(train)), y)
    np.testing.assert_allclose(m.predict(train.inputs), m.y_offset + K @ alpha, atol=1e-8)


def test_stationarity_residual(ocean):
    train, outputs, _ = ocean
    K = gram(default_input_kernel(train.inputs), train.inputs)
    top = max_dep_weight(K, 1.0, sensitive_gram(outputs[:, 2])[0])
    m = fkl_fit(train, outputs[:, 2], 1.0, 0.5 * top)
    assert system_residual(m, train) <= 1e-8 * max(1.0, np.abs(K).max())


def test_too_large_weight_reports_admissible(ocean):
    train, outputs, _ = ocean
    K = gram(default_input_kernel(train.inputs), train.inputs)
    top = max_dep_weight(K, 1.0, sensitive_gram(outputs[:, 2])[0])
    with pytest.raises(DependenceWeightError) as exc:
        fkl_fit(train, outputs[:, 2], 1.0, 4 * top)
    assert 0 < exc.value.max_admissible <= 4 * top


def test_fit_validation(ocean):
    train, outputs, _ = ocean
    with pytest.raises(InputError):
        fkl_fit(train, outputs[:5, 0])
    with pytest.raises(InputError):
        fkl_fit(train, outputs[:, 0], dep_weight=-1.0)


def test_dependence_raises_hsic(ocean):
    train, outputs, _ = ocean
    s = outputs[:, 2]
    K = gram(default_input_kernel(train.inputs), train.inputs)
    top = max_dep_weight(K, 3.0, sensitive_gram(s)[0])
    h0 = hsic(fkl_fit(train, s, 3.0, 0.0).predict(train.inputs), s)
    h1 = hsic(fkl_fit(train, s, 3.0, 0.9 * top).predict(train.inputs), s)
    assert h1 > h0


def test_shuffled_sensitive_barely_changes_hsic():
    ok = 0
    for seed in range(20):
        train, _, _ = make_ocean_dataset(RngStream(20, seed), 40)
        g = RngStream(20, seed).child(1).generator()
        s = g.permutation(train.targets)
        p0 = fkl_fit(train, s, 3.0, 0.0).predict(train.inputs)
        K = gram(default_input_kernel(train.inputs), train.inputs)
        top = max_dep_weight(K, 3.0, sensitive_gram(s)[0])
        p1 = fkl_fit(train, s, 3.0, 0.02 * top).predict(train.inputs)
        h0, h1 = hsic(p0, s), hsic(p1, s)
        ok += abs(h1 - h0) < 0.1 * h0
    assert ok >= 16


def test_curve_single_point_shared(ocean):
    train, outputs, truth = ocean
    rows = fkl_consistency_curve(train, train, [outputs[:, k] for k in range(4)], [0.0], 3.0,
                                 test_targets=truth)
    assert len({round(r["rmse"], 12) for r in rows}) == 1


def test_curve_hsic_column_recomputes(ocean):
    train, outputs, truth = ocean
    s = outputs[:, 1]
    rows = fkl_consistency_curve(train, train, [s], [0.0, 0.5], 3.0, test_targets=truth)
    K = gram(default_input_kernel(train.inputs), train.inputs)
    top = max_dep_weight(K, 3.0, sensitive_gram(s)[0])
    pred = fkl_fit(train, s, 3.0, 0.5 * top).predict(train.inputs)
    assert rows[1]["hsic"] == pytest.approx(normalized_hsic(pred, s), rel=1e-9)
    assert [r["dep_fraction"] for r in rows] == [0.0, 0.5]


def test_tune_dep_fraction_returns_grid_value(ocean):
    train, outputs, _ = ocean
    frac = tune_dep_fraction(train, outputs[:, 2], 3.0, (0.0, 0.5), np.random.default_rng(0))
    assert frac in (0.0, 0.5)


def test_centering_idempotent():
    H = centering(5)
    np.testing.assert_allclose(H @ H, H, atol=1e-15)


def test_benchmark_smoke():
    res = fkl_benchmark(seeds=2, seed=4)
    assert len(res["per_seed"]) == 2
    assert len(res["curves"]) == 2 * 4 * 8
