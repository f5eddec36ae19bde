import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import lfilter

from rescap.errors import InvalidModel
from rescap.generators import (
    REFERENCE_ARSV,
    AggregationVector,
    ArmaModel,
    ArsvModel,
    GarchModel,
    arma_aggregate_msfe,
    arma_aggregate_target,
    arma_autocovariance,
    arma_psi_weights,
    arma_simulate,
    arsv_simulate,
    arsv_squared_autocorr_approx,
    garch_aggregate_variance_forecast,
    garch_quadratic_task,
    garch_simulate,
    linear_task_target,
    quadratic_task_target,
)
from rescap.series_core import mean_with_se


# -- ARMA ----------------------------------------------------------------------------


def test_arma_invariants():
    with pytest.raises(InvalidModel):
        ArmaModel(phi=(1.0,))
    with pytest.raises(InvalidModel):
        ArmaModel(theta=(-1.2,))
    with pytest.raises(InvalidModel):
        ArmaModel(sigma2=0.0)
    ArmaModel(phi=(0.5, 0.3), theta=(0.4,))


def test_white_noise_identity():
    z, zeta = arma_simulate(ArmaModel(), 100, seed=1)
    np.testing.assert_array_equal(z.values, zeta.values)


def test_arma_deterministic():
    m = ArmaModel((0.5,), (0.2,))
    a, _ = arma_simulate(m, 1000, seed=4)
    b, _ = arma_simulate(m, 1000, seed=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_ar1_variance():
    z, _ = arma_simulate(ArmaModel((0.9,)), 1_000_000, seed=2)
    x = np.asarray(z)
    m, se = mean_with_se(x**2, n_batches=100)
    assert abs(m - 1 / (1 - 0.81)) < 3 * se


def test_ma1_lag_two_cutoff():
    z, _ = arma_simulate(ArmaModel(theta=(0.5,)), 1_000_000, seed=3)
    x = np.asarray(z)
    m, se = mean_with_se(x[:-2] * x[2:])
    assert abs(m) < 3 * se


def test_psi_weights_examples():
    np.testing.assert_allclose(arma_psi_weights(ArmaModel((0.5,)), 4), [1, 0.5, 0.25, 0.125])
    np.testing.assert_allclose(arma_psi_weights(ArmaModel(theta=(0.3,)), 4), [1, 0.3, 0, 0])
    psi = arma_psi_weights(ArmaModel((0.5,), (0.2,)), 3)
    np.testing.assert_allclose(psi, [1, 0.7, 0.35])


def test_autocovariance_ar1():
    g = arma_autocovariance(ArmaModel((0.5,)), 3)
    np.testing.assert_allclose(g, [0.5**h / 0.75 for h in range(4)], rtol=1e-12)


def test_msfe_examples():
    m = ArmaModel((0.5,))
    assert arma_aggregate_msfe(ArmaModel((0.3,), (0.2,), 2.5), [1.0]) == pytest.approx(2.5)
    assert arma_aggregate_msfe(m, [1.0, 1.0]) == pytest.approx(3.25)
    assert arma_aggregate_msfe(m, [0.0, 0.0, 0.0]) == 0.0


def test_msfe_matches_conditional_simulation():
    # best forecast: rerun the ARMA filter with the future innovations set to zero
    m = ArmaModel((0.6,), (0.3,))
    w = np.array([0.5, -1.0, 2.0])
    f, burn, M = w.size, 200, 100_000
    zeta = np.random.default_rng(7).standard_normal((M, burn + f))
    b, a = [1.0, *m.theta], [1.0, *(-v for v in m.phi)]
    z = lfilter(b, a, zeta, axis=1)
    past = zeta.copy()
    past[:, burn:] = 0.0
    zhat = lfilter(b, a, past, axis=1)
    err = (z - zhat)[:, burn:]  # columns T+1..T+f
    agg = sum(w[f - i] * err[:, i - 1] for i in range(1, f + 1))
    e2 = agg**2
    assert abs(e2.mean() - arma_aggregate_msfe(m, w)) < 3 * e2.std() / math.sqrt(M)


def test_aggregate_target():
    z = np.arange(10.0)
    np.testing.assert_array_equal(arma_aggregate_target(z, [1.0]).values, z[1:])
    np.testing.assert_array_equal(arma_aggregate_target(z, [0.0, 0.0]).values, np.zeros(8))
    w = np.random.default_rng(0).standard_normal(3)
    y = arma_aggregate_target(z, AggregationVector(w)).values
    want = [sum(w[3 - i] * z[t + i] for i in range(1, 4)) for t in range(7)]
    np.testing.assert_allclose(y, want)


def test_linear_task_target_window_order():
    z = np.arange(20.0)
    y = linear_task_target(z, [1.0, 0.0, 0.0, 0.0], f=1, h=2)
    assert y.origin_index == 2
    # first coefficient multiplies z(t + f)
    assert y.values[0] == z[3]
    y2 = linear_task_target(z, [0.0, 0.0, 0.0, 1.0], f=1, h=2)
    assert y2.values[0] == z[0]


def test_quadratic_target_matches_direct():
    rng = np.random.default_rng(1)
    z = rng.standard_normal(30)
    Q = rng.standard_normal((3, 3))
    y = quadratic_task_target(z, Q, f=1, h=1)
    t = 5
    win = np.array([z[t + 1], z[t], z[t - 1]])
    assert y.values[t - 1] == pytest.approx(win @ Q @ win)


# -- GARCH ---------------------------------------------------------------------------


def test_garch_invariants():
    with pytest.raises(InvalidModel):
        GarchModel(0.1, 0.5, 0.5)
    with pytest.raises(InvalidModel):
        GarchModel(0.0, 0.1, 0.1)


def test_garch_degenerate_is_white_noise():
    z, s2 = garch_simulate(GarchModel(0.3, 0.0, 0.0), 1000, seed=0)
    np.testing.assert_allclose(s2.values, 0.3)


def test_garch_moments_and_floor():
    m = GarchModel(0.1, 0.1, 0.8)
    z, s2 = garch_simulate(m, 1_000_000, seed=5)
    x = np.asarray(z)
    assert np.all(np.asarray(s2) >= m.alpha0)
    mv, se_v = mean_with_se(x**2, n_batches=100)
    assert abs(mv - m.unconditional_variance) < 3 * se_v
    mm, se_m = mean_with_se(x, n_batches=100)
    assert abs(mm) < 3 * se_m


def test_garch_forecast_examples():
    assert garch_aggregate_variance_forecast(GarchModel(0.2, 0.0, 0.0), 1.0, 0.5, 4) == pytest.approx(0.8)
    m = GarchModel(0.1, 0.1, 0.8)
    assert garch_aggregate_variance_forecast(m, 0.7, 1.3, 1) == pytest.approx(0.1 + 0.1 * 0.49 + 0.8 * 1.3)


def test_garch_forecast_conditional_monte_carlo():
    m, f, M = GarchModel(0.1, 0.1, 0.8), 5, 1_000_000
    rng = np.random.default_rng(8)
    s2 = np.full(M, m.alpha0 + m.alpha1 * 0.0 + m.beta * 1.0)
    total = np.zeros(M)
    for _ in range(f):
        zt = np.sqrt(s2) * rng.standard_normal(M)
        total += zt
        s2 = m.alpha0 + m.alpha1 * zt**2 + m.beta * s2
    t2 = total**2
    exact = garch_aggregate_variance_forecast(m, 0.0, 1.0, f)
    assert abs(t2.mean() - exact) < 3 * t2.std() / math.sqrt(M)


@given(st.integers(1, 6), st.integers(0, 2**31))
def test_garch_quadratic_task_is_squared_sum(f, seed):
    Q = garch_quadratic_task(f)
    v = np.random.default_rng(seed).standard_normal(f)
    assert v @ Q @ v == pytest.approx(v.sum() ** 2, rel=1e-12, abs=1e-12)


# -- ARSV ------------------------------------------------------------------------------


def test_arsv_degenerate_volatility():
    m = ArsvModel(0.0, -0.5, 0.5, 1e-12)
    _, sigma, _ = arsv_simulate(m, 100, seed=0)
    np.testing.assert_allclose(sigma.values, math.exp(-0.5 / (2 * 0.5)), rtol=1e-9)


def test_arsv_deterministic_and_aligned():
    a = arsv_simulate(REFERENCE_ARSV, 500, seed=9)
    b = arsv_simulate(REFERENCE_ARSV, 500, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)
    np.testing.assert_allclose(np.log(a[1].values ** 2), a[2].values)


def test_arsv_log_variance_variance():
    _, _, b = arsv_simulate(REFERENCE_ARSV, 1_000_000, seed=10)
    x = np.asarray(b)
    v, se = mean_with_se((x - REFERENCE_ARSV.b_mean) ** 2, n_batches=50)
    assert abs(v - REFERENCE_ARSV.sigma_b2) < 3 * se


def test_squared_autocorr_approx():
    # (e^2.398 - 1) / (3 e^2.398 - 1) = 0.3125, times alpha = 0.9
    approx = arsv_squared_autocorr_approx(REFERENCE_ARSV, 1)
    assert approx == pytest.approx(0.28125, abs=5e-4)
    assert arsv_squared_autocorr_approx(ArsvModel(0, -1, 0.0, 0.5), 3) == 0.0
    assert arsv_squared_autocorr_approx(REFERENCE_ARSV, 2000) < 1e-80
    z, _, _ = arsv_simulate(REFERENCE_ARSV, 2_000_000, seed=11)
    x2 = (np.asarray(z) - REFERENCE_ARSV.r) ** 2
    c = x2 - x2.mean()
    rho = (c[:-1] @ c[1:]) / (c @ c)
    assert abs(rho - approx) < 0.05


def test_only_gaussian_innovations():
    with pytest.raises(NotImplementedError):
        arma_simulate(ArmaModel(), 10, 0, distribution="student")
