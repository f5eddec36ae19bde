import math
import warnings

import numpy as np
import pytest
from scipy import linalg
from scipy.signal import lfilter

from rescap.capacity_model import (
    CapacityReport,
    FilterTask,
    LinearTask,
    QuadraticTask,
    ReservoirModel,
    TruncationPolicy,
    capacity,
    epsilon_autocovariance,
    epsilon_mean,
    filter_task_cov,
    linear_task_cov,
    linear_task_var,
    quadratic_task_cov,
    simulate_model_recursion,
    state_autocovariance0,
    state_mean,
    task_capacity,
)
from rescap.errors import InvalidModel, SingularGamma, TruncationBudgetExceeded
from rescap.generators import REFERENCE_ARSV, GarchModel, arsv_simulate, garch_quadratic_task, garch_simulate
from rescap.series_core import (
    GaussianAutomoments,
    IidAutomoments,
    TimeSeries,
    estimate_automoments,
    estimate_comoments,
)
from rescap.tdr import REFERENCE_D, REFERENCE_IKEDA_THETA, IkedaKernel, ReadoutConfig, TdrParams, evaluate_nmse, random_mask, train_readout

PHI = 0.5
N_MC = 1_000_000


def ar1_path(n, seed, phi=PHI):
    e = np.random.default_rng(seed).standard_normal(n + 500)
    return lfilter([1.0], [1.0, -phi], e)[500:]


def ar1_provider(phi=PHI):
    return GaussianAutomoments(0.0, lambda h: phi ** abs(h) / (1 - phi**2))


def small_model(R=4, N=3, seed=0, norm=0.5):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (N, N))
    A *= norm / np.max(np.abs(A).sum(axis=1))
    # decaying coefficients keep the polynomial variance moderate
    poly = rng.standard_normal((R, N)) * 0.5 ** np.arange(R)[:, None]
    return ReservoirModel(rng.uniform(-0.5, 0.5, N), A, poly)


def batch_se(x, n_batches=50):
    """Batch-means mean and standard error along axis 0."""
    x = np.asarray(x)
    n = x.shape[0] // n_batches * n_batches
    b = x[:n].reshape(n_batches, -1, *x.shape[1:]).mean(axis=1)
    return x.mean(axis=0), b.std(axis=0, ddof=1) / math.sqrt(n_batches)


def assert_within(est, se, exact, k=3.0):
    est, se, exact = np.broadcast_arrays(est, se, exact)
    bad = np.abs(est - exact) > k * se + 1e-12
    assert not bad.any(), f"{est[bad]} vs {exact[bad]} (se {se[bad]})"


# -- model construction -------------------------------------------------------------


def test_model_refuses_unstable():
    with pytest.raises(InvalidModel):
        ReservoirModel([0.0], [[1.0]], [[1.0]])
    m = small_model()
    assert m.spectral_radius < 1 and m.R == 4
    with pytest.raises(ValueError):
        m.A[0, 0] = 1.0


def test_model_from_reference_tdr():
    p = TdrParams(40, REFERENCE_D, IkedaKernel(), REFERENCE_IKEDA_THETA, random_mask(40, 0))
    m = ReservoirModel.from_tdr(p, 4)
    assert m.N == 40 and m.poly.shape == (4, 40)
    assert m.spectral_radius < 0.1


# -- epsilon moments ---------------------------------------------------------------------


def test_epsilon_mean_vanishes_for_odd_poly_and_centered_input():
    m = small_model()
    poly = np.array(m.poly)
    poly[1::2] = 0.0
    odd = ReservoirModel(m.x0, m.A, poly)
    np.testing.assert_array_equal(epsilon_mean(odd, IidAutomoments.standard_normal()), 0.0)
    np.testing.assert_allclose(state_mean(odd, IidAutomoments.standard_normal()), odd.x0)


def test_epsilon_mean_linear():
    m = small_model(R=1)
    u = IidAutomoments.uniform(0.0, 2.0)
    np.testing.assert_allclose(epsilon_mean(m, u), m.poly[0] * 1.0)


def test_epsilon_mean_monte_carlo():
    m = small_model()
    z = ar1_path(N_MC, 1)
    est, se = batch_se(m.epsilon(z))
    assert_within(est, se, epsilon_mean(m, ar1_provider()))


def test_epsilon_autocovariance_iid_and_linear():
    m = small_model()
    iid = IidAutomoments.standard_normal()
    for h in (1, 2, 7):
        np.testing.assert_array_equal(epsilon_autocovariance(m, iid, h), 0.0)
    m1 = small_model(R=1)
    u = IidAutomoments.uniform(-1.0, 3.0)
    want = np.outer(m1.poly[0], m1.poly[0]) * (u.mu((2,)) - u.mu((1,)) ** 2)
    np.testing.assert_allclose(epsilon_autocovariance(m1, u, 0), want, atol=1e-14)


def test_epsilon_autocovariance_monte_carlo():
    m = small_model()
    z = ar1_path(N_MC, 2)
    eps = m.epsilon(z)
    eps = eps - eps.mean(axis=0)
    h = 3
    prods = eps[:-h, :, None] * eps[h:, None, :]
    est, se = batch_se(prods)
    assert_within(est, se, epsilon_autocovariance(m, ar1_provider(), h))


# -- state moments ---------------------------------------------------------------------


def test_state_mean_scalar():
    m = ReservoirModel([0.2], [[0.5]], [[1.0], [0.3]])
    u = IidAutomoments.standard_normal()
    # x0 + (0.3 * 1) / (1 - 0.5)
    assert state_mean(m, u)[0] == pytest.approx(0.2 + 0.6)


def test_state_mean_residual_and_monte_carlo():
    m = small_model()
    prov = ar1_provider()
    mu = state_mean(m, prov)
    res = (np.eye(3) - m.A) @ (mu - m.x0) - epsilon_mean(m, prov)
    assert np.max(np.abs(res)) < 1e-10
    X = simulate_model_recursion(m, ar1_path(N_MC, 3)).states
    est, se = batch_se(X)
    assert_within(est, se, mu)


@pytest.mark.parametrize("R", [1, 2, 4])
def test_gamma0_lyapunov_iid(R):
    m = small_model(R=R, N=5, seed=R)
    u = IidAutomoments.uniform(-1.0, 1.0)
    G = state_autocovariance0(m, u)
    ge = epsilon_autocovariance(m, u, 0)
    np.testing.assert_allclose(G, linalg.solve_discrete_lyapunov(m.A, ge), atol=1e-8)
    assert np.max(np.abs(G - m.A @ G @ m.A.T - ge)) < 1e-8


def test_gamma0_zero_transition():
    m0 = small_model()
    m = ReservoirModel(m0.x0, np.zeros((3, 3)), m0.poly)
    prov = ar1_provider()
    np.testing.assert_allclose(state_autocovariance0(m, prov), epsilon_autocovariance(m, prov, 0), atol=1e-14)


@pytest.mark.parametrize("R", [1, 2, 4])
def test_gamma0_monte_carlo_ar1(R):
    m = small_model(R=R, seed=10 + R)
    X = simulate_model_recursion(m, ar1_path(N_MC, 20 + R)).states
    Xc = X - X.mean(axis=0)
    est, se = batch_se(Xc[:, :, None] * Xc[:, None, :])
    G = state_autocovariance0(m, ar1_provider(), TruncationPolicy(h_max=60))
    assert_within(est, se, G)


def test_gamma0_budget_exceeded():
    m = small_model(norm=0.99)
    with pytest.raises(TruncationBudgetExceeded):
        state_autocovariance0(m, ar1_provider(), TruncationPolicy(k_max=3, h_max=2))


# -- task covariances ---------------------------------------------------------------------


def test_linear_task_zero():
    m = small_model()
    task = LinearTask(np.zeros(3), 1, 1)
    np.testing.assert_array_equal(linear_task_cov(m, ar1_provider(), task), 0.0)


def test_linear_task_var_e1():
    prov = ar1_provider()
    _, var = linear_task_var(prov, LinearTask([1.0, 0.0], 0, 1))
    assert var == pytest.approx(prov.mu((1, 1), (0,)))


@pytest.mark.parametrize("lag", [0, 1, 3])
def test_linear_pure_memory_iid(lag):
    # y(t) = z(t - lag); only the k = lag term survives under independence
    m = small_model(R=1, N=4, seed=5)
    L = np.zeros(lag + 1)
    L[lag] = 1.0
    u = IidAutomoments.uniform(-1.0, 1.0)
    cov = linear_task_cov(m, u, LinearTask(L, 0, lag))
    want = u.mu((2,)) * np.linalg.matrix_power(m.A, lag) @ m.poly[0]
    np.testing.assert_allclose(cov, want, atol=1e-14)


def test_linear_task_cov_monte_carlo():
    m = small_model()
    z = ar1_path(N_MC, 30)
    X = simulate_model_recursion(m, z).states
    L = np.array([0.5, -1.0, 2.0])
    f, h = 1, 1
    # y(t) = L1 z(t+1) + L2 z(t) + L3 z(t-1), aligned on t = 1..n-2
    y = L[0] * z[2:] + L[1] * z[1:-1] + L[2] * z[:-2]
    Xc = X[1:-1] - X[1:-1].mean(axis=0)
    est, se = batch_se((y - y.mean())[:, None] * Xc)
    assert_within(est, se, linear_task_cov(m, ar1_provider(), LinearTask(L, f, h)))


def test_quadratic_task_trivial():
    m = small_model()
    var_y, cov = quadratic_task_cov(m, ar1_provider(), QuadraticTask(np.zeros((2, 2)), 1, 0))
    np.testing.assert_array_equal(cov, 0.0)
    var_y, _ = quadratic_task_cov(m, IidAutomoments.standard_normal(), QuadraticTask([[1.0]], 0, 0))
    assert var_y == pytest.approx(2.0)


def test_quadratic_garch_monte_carlo():
    gm = GarchModel(0.1, 0.1, 0.6)
    z, _ = garch_simulate(gm, N_MC, seed=4)
    z = np.asarray(z)
    f = 2
    Q = np.zeros((3, 3))
    Q[:2, :2] = garch_quadratic_task(f)
    m = small_model(R=2, seed=7)
    table = estimate_automoments(z, 6, 10)
    var_y, cov = quadratic_task_cov(m, table, QuadraticTask(Q, f, 0))
    # y(t) = (z(t+1) + z(t+2))^2
    y = (z[1:-1] + z[2:]) ** 2
    X = simulate_model_recursion(m, z).states[:-2]
    Xc = X - X.mean(axis=0)
    est, se = batch_se((y - y.mean())[:, None] * Xc)
    assert_within(est, se, cov)
    assert var_y == pytest.approx(y.var(), rel=1e-2)


def test_filter_independent_teaching_gives_zero():
    m = small_model(R=2)
    mean_y = 1.5
    u = IidAutomoments.uniform(-1.0, 2.0)
    entries = {(r, -j): mean_y * u.mu((r,)) for r in (1, 2) for j in range(6)}
    from rescap.series_core import ComomentTable

    com = ComomentTable(entries, 2, mean_y)
    cov = filter_task_cov(m, com, u.mean, epsilon_mean(m, u), TruncationPolicy(h_max=5))
    np.testing.assert_allclose(cov, 0.0, atol=1e-14)


def test_filter_matches_linear_for_pure_input():
    # y = z with exact comoments of an AR(1): mu_yz^1(-j) = gamma(j)
    m = small_model(R=1, N=4, seed=8)
    prov = ar1_provider()
    hmax = 80
    from rescap.series_core import ComomentTable

    com = ComomentTable({(1, -j): prov.mu((1, 1), (j,)) for j in range(hmax + 1)}, 1, 0.0)
    policy = TruncationPolicy(h_max=hmax)
    cf = filter_task_cov(m, com, 0.0, epsilon_mean(m, prov), policy)
    cl = linear_task_cov(m, prov, LinearTask([1.0], 0, 0), policy)
    np.testing.assert_allclose(cf, cl, atol=1e-10)


def test_filter_strict_printed_centering():
    m = small_model(R=1, N=2)
    from rescap.series_core import ComomentTable

    com = ComomentTable({(1, 0): 1.0}, 1, 2.0)
    mu_eps = np.array([0.1, -0.2])
    pol = TruncationPolicy(h_max=0)
    ours = filter_task_cov(m, com, 0.5, mu_eps, pol)
    strict = filter_task_cov(m, com, 0.5, mu_eps, pol, strict_printed=True)
    np.testing.assert_allclose(strict - ours, (2.0 - 0.5) * mu_eps)


@pytest.mark.slow
def test_arsv_filter_end_to_end():
    z, sigma, _ = arsv_simulate(REFERENCE_ARSV, N_MC, seed=12)
    z = TimeSeries(np.asarray(z) - REFERENCE_ARSV.r)
    y = np.asarray(sigma)
    p = TdrParams(40, REFERENCE_D, IkedaKernel(), REFERENCE_IKEDA_THETA, random_mask(40, 0))
    m = ReservoirModel.from_tdr(p, 4)
    policy = TruncationPolicy(h_max=20)
    table = estimate_automoments(z, 8, policy.h_max)
    task = FilterTask(estimate_comoments(y, z, 4, (-policy.h_max, 0)), float(y.var()), float(y.mean()))
    closed = task_capacity(m, table, task, 1e-8, policy).capacity
    X = simulate_model_recursion(m, z)
    ro = train_readout(X, y, ReadoutConfig(1e-8, 200))
    mc = 1 - evaluate_nmse(X, ro, y, 200)
    assert abs(closed - mc) < 0.07


# -- capacity formula ----------------------------------------------------------------------


def _spd(N=5, seed=0):
    B = np.random.default_rng(seed).standard_normal((N, N))
    return B @ B.T / N + 0.1 * np.eye(N)


def test_capacity_zero_cov():
    rep = capacity(_spd(), np.zeros(5), 2.0, 1e-3)
    assert rep.capacity == 0.0 and rep.mse == 2.0


def test_capacity_lambda_zero_collapses():
    G = _spd()
    c = np.random.default_rng(1).standard_normal(5) * 0.1
    var_y = 10.0
    rep = capacity(G, c, var_y, 0.0)
    assert rep.capacity == pytest.approx(c @ np.linalg.solve(G, c) / var_y, rel=1e-12)
    assert rep.mse == pytest.approx(var_y * (1 - rep.capacity))


def test_capacity_matches_explicit_sandwich():
    G = _spd(seed=2)
    c = np.random.default_rng(3).standard_normal(5) * 0.1
    lam = 0.3
    Mi = np.linalg.inv(G + lam * np.eye(5))
    want = c @ Mi @ (G + 2 * lam * np.eye(5)) @ Mi @ c / 5.0
    assert capacity(G, c, 5.0, lam).capacity == pytest.approx(want, rel=1e-12)


def test_capacity_decreases_to_zero_in_lambda():
    G = _spd(seed=4)
    c = np.random.default_rng(5).standard_normal(5) * 0.1
    grid = [1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e3]
    caps = [capacity(G, c, 5.0, lam).capacity for lam in grid]
    assert all(a >= b for a, b in zip(caps, caps[1:]))
    assert capacity(G, c, 5.0, 1e9).capacity < 1e-6


def test_capacity_singular_errors():
    G = np.diag([1.0, 0.0])
    with pytest.raises(SingularGamma):
        capacity(G, [0.1, 0.1], 1.0, 0.0)
    assert math.isfinite(capacity(G, [0.1, 0.0], 1.0, 1e-6).capacity)


def test_capacity_floors_negative_eigenvalues():
    G = np.diag([1.0, -1e-3])
    with pytest.warns(UserWarning):
        rep = capacity(G, [0.1, 0.0], 1.0, 1e-3)
    assert np.min(np.linalg.eigvalsh(rep.Gamma0)) >= 0


def test_report_json():
    rep = capacity(_spd(), np.ones(5) * 0.01, 1.0, 1e-3)
    assert isinstance(rep, CapacityReport)
    d = rep.to_dict(include_matrices=False)
    assert d["capacity"] == rep.capacity and "Gamma0" not in d


@pytest.mark.parametrize("R", [1, 2, 4])
def test_unclamped_capacity_within_bounds(R):
    m = small_model(R=R, seed=R)
    prov = ar1_provider()
    for task in (LinearTask([1.0, 0.0, 0.0], 0, 2), LinearTask([1.0, 0.0], 1, 0), QuadraticTask(np.eye(2), 0, 1)):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rep = task_capacity(m, prov, task, 0.0)
        assert -1e-8 <= rep.capacity_raw <= 1 + 1e-8


def test_closed_form_matches_trained_readout_on_model_path():
    # isolates formula correctness from model-vs-reservoir error
    m = small_model(R=2, N=4, seed=9)
    z = ar1_path(N_MC, 40)
    X = simulate_model_recursion(m, TimeSeries(z))
    y = TimeSeries(z[:-2], origin_index=2)  # y(t) = z(t - 2)
    ro = train_readout(X, y, ReadoutConfig(0.0, 200))
    mc = 1 - evaluate_nmse(X, ro, y, 200)
    closed = task_capacity(m, ar1_provider(), LinearTask([0.0, 0.0, 1.0], 0, 2), 0.0).capacity
    assert abs(mc - closed) < 5e-3


# -- model recursion ------------------------------------------------------------------------


def test_zero_input_constant_path():
    m = small_model()
    X = simulate_model_recursion(m, np.zeros(50)).states
    np.testing.assert_allclose(X, np.broadcast_to(m.x0, X.shape))


def test_recursion_contracts():
    m = small_model()
    z = ar1_path(200, 6)
    a = simulate_model_recursion(m, z, x_init=m.x0 + 1.0).states
    b = simulate_model_recursion(m, z, x_init=m.x0 - 1.0).states
    gaps = np.max(np.abs(a - b), axis=1)
    nrm = m.inf_norm
    bound = 2.0 * nrm ** np.arange(1, 201)
    assert np.all(gaps <= bound * (1 + 1e-12) + 1e-300)


def test_recursion_matches_moving_average_form():
    m = small_model()
    prov = ar1_provider()
    z = ar1_path(400, 7)
    X = simulate_model_recursion(m, z).states
    mu_x, mu_eps = state_mean(m, prov), epsilon_mean(m, prov)
    eps = m.epsilon(z) - mu_eps
    t = 399
    terms, Aj = np.zeros(3), np.eye(3)
    for j in range(t + 1):
        terms += Aj @ eps[t - j]
        Aj = Aj @ m.A
    # the path started at x0 rather than in the stationary past; that gap has decayed
    np.testing.assert_allclose(X[t], mu_x + terms, atol=1e-12)
