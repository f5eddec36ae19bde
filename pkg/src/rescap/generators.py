"""Data generating processes: ARMA, GARCH(1,1) and ARSV.

All simulators draw Gaussian innovations from ``numpy.random.default_rng(seed)``
and are bit-for-bit reproducible for a given ``(seed, length, burn_in)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.signal import lfilter

from .errors import InvalidModel
from .series_core import TimeSeries

__all__ = [
    "ArmaModel",
    "GarchModel",
    "ArsvModel",
    "AggregationVector",
    "arma_simulate",
    "arma_psi_weights",
    "arma_autocovariance",
    "arma_aggregate_msfe",
    "arma_aggregate_target",
    "garch_simulate",
    "garch_aggregate_variance_forecast",
    "garch_quadratic_task",
    "arsv_simulate",
    "arsv_squared_autocorr_approx",
    "linear_task_target",
    "quadratic_task_target",
    "REFERENCE_ARSV",
]

_ROOT_MARGIN = 1e-9


def _check_distribution(distribution: str) -> None:
    if distribution != "gaussian":
        raise NotImplementedError(f"innovation law {distribution!r} not implemented")


def _roots_outside_unit_disk(poly_lowfirst) -> bool:
    coeffs = np.trim_zeros(np.asarray(poly_lowfirst, dtype=float), "b")
    if coeffs.size <= 1:
        return True
    roots = np.roots(coeffs[::-1])
    return bool(np.all(np.abs(roots) > 1 + _ROOT_MARGIN))


@dataclass(frozen=True)
class ArmaModel:
    """``Phi(L) z(t) = Theta(L) zeta(t)`` with ``zeta ~ N(0, sigma2)``.

    ``Phi(x) = 1 - phi_1 x - ... - phi_p x^p`` and
    ``Theta(x) = 1 + theta_1 x + ... + theta_q x^q``.
    """

    phi: tuple = ()
    theta: tuple = ()
    sigma2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if not self.sigma2 > 0:
            raise InvalidModel("innovation variance must be positive")
        if not _roots_outside_unit_disk((1.0,) + tuple(-v for v in self.phi)):
            raise InvalidModel(f"AR polynomial {self.phi} is not causal")
        if not _roots_outside_unit_disk((1.0,) + self.theta):
            raise InvalidModel(f"MA polynomial {self.theta} is not invertible")

    @property
    def p(self) -> int:
        return len(self.phi)

    @property
    def q(self) -> int:
        return len(self.theta)


@dataclass(frozen=True)
class GarchModel:
    alpha0: float
    alpha1: float
    beta: float

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise InvalidModel("alpha0 must be positive")
        if self.alpha1 < 0 or self.beta < 0:
            raise InvalidModel("alpha1 and beta must be nonnegative")
        if not self.alpha1 + self.beta < 1:
            raise InvalidModel("alpha1 + beta must be < 1 for a stationary solution")

    @property
    def persistence(self) -> float:
        return self.alpha1 + self.beta

    @property
    def unconditional_variance(self) -> float:
        return self.alpha0 / (1.0 - self.persistence)


@dataclass(frozen=True)
class ArsvModel:
    """``z(t) = r + sigma(t) zeta(t)``, ``b(t) = lam + alpha b(t-1) + w(t)``,
    with ``b = log sigma^2`` and ``w ~ N(0, sigma_w^2)`` independent of ``zeta``."""

    r: float
    lam: float
    alpha: float
    sigma_w: float

    def __post_init__(self):
        if not -1.0 < self.alpha < 1.0:
            raise InvalidModel("alpha must lie in (-1, 1)")
        if not self.sigma_w > 0:
            raise InvalidModel("sigma_w must be positive")

    @property
    def sigma_b2(self) -> float:
        return self.sigma_w**2 / (1.0 - self.alpha**2)

    @property
    def b_mean(self) -> float:
        return self.lam / (1.0 - self.alpha)

    @property
    def variance(self) -> float:
        return math.exp(self.b_mean + 0.5 * self.sigma_b2)

    @property
    def kurtosis(self) -> float:
        return 3.0 * math.exp(self.sigma_b2)


REFERENCE_ARSV = ArsvModel(r=3.9e-4, lam=-0.821, alpha=0.9, sigma_w=0.675)


@dataclass(frozen=True)
class AggregationVector:
    w: tuple = field(default=(1.0,))

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.w))
        if len(w) < 1:
            raise ValueError("aggregation vector needs at least one weight")
        object.__setattr__(self, "w", w)

    @property
    def f(self) -> int:
        return len(self.w)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.w, dtype=dtype)


def _as_w(w) -> np.ndarray:
    return np.asarray(w.w if isinstance(w, AggregationVector) else w, dtype=float).reshape(-1)


# -- ARMA ---------------------------------------------------------------------


def arma_simulate(
    model: ArmaModel,
    length: int,
    seed: int,
    burn_in: int | None = None,
    distribution: str = "gaussian",
) -> tuple[TimeSeries, TimeSeries]:
    """Simulate ``(z, zeta)`` from zero initial conditions, dropping ``burn_in`` samples."""
    _check_distribution(distribution)
    if length < 1:
        raise ValueError("length must be >= 1")
    if burn_in is None:
        burn_in = 10 * max(model.p, model.q) + 100
    rng = np.random.default_rng(seed)
    zeta = rng.normal(0.0, math.sqrt(model.sigma2), size=length + burn_in)
    b = np.concatenate(([1.0], model.theta))
    a = np.concatenate(([1.0], -np.asarray(model.phi)))
    z = lfilter(b, a, zeta)
    return TimeSeries(z[burn_in:]), TimeSeries(zeta[burn_in:])


def arma_psi_weights(model: ArmaModel, count: int) -> np.ndarray:
    """Causal MA(inf) weights ``psi_0 .. psi_{count-1}``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    psi = np.zeros(count)
    psi[0] = 1.0
    for j in range(1, count):
        acc = model.theta[j - 1] if j <= model.q else 0.0
        for i in range(1, min(j, model.p) + 1):
            acc += model.phi[i - 1] * psi[j - i]
        psi[j] = acc
    return psi


def arma_autocovariance(model: ArmaModel, max_lag: int, tol: float = 1e-15) -> np.ndarray:
    """``gamma(0..max_lag)`` by summing the psi-weight representation until the
    weights fall below ``tol``."""
    n = 64
    while True:
        psi = arma_psi_weights(model, n + max_lag + 1)
        if np.max(np.abs(psi[n:])) < tol or n > 1 << 20:
            break
        n *= 2
    return np.array(
        [model.sigma2 * psi[: n] @ psi[h : n + h] for h in range(max_lag + 1)]
    )


def arma_aggregate_msfe(model: ArmaModel, w) -> float:
    """Mean square error of the best forecast of ``sum_i w_{f-i+1} z(T+i)``."""
    w = _as_w(w)
    f = w.size
    psi = arma_psi_weights(model, 2 * f + 1)
    # wf(i) = w_{f-i+1} with 1-based i
    wf = lambda i: w[f - i]
    total = 0.0
    for i in range(1, f + 1):
        total += wf(i) ** 2 * np.sum(psi[:i] ** 2)
    for i in range(1, f):
        for j in range(i + 1, f + 1):
            total += 2.0 * wf(i) * wf(j) * float(psi[:i] @ psi[j - i : j])
    return float(model.sigma2 * total)


def arma_aggregate_target(z: TimeSeries, w) -> TimeSeries:
    """``y(t) = sum_{i=1..f} w_{f-i+1} z(t+i)`` for every ``t`` where it is defined."""
    w = _as_w(w)
    f = w.size
    x = np.asarray(z, dtype=float)
    if x.size <= f:
        raise ValueError("series too short for the aggregation horizon")
    n = x.size - f
    y = np.zeros(n)
    for i in range(1, f + 1):
        y += w[f - i] * x[i : i + n]
    origin = z.origin_index if isinstance(z, TimeSeries) else 0
    return TimeSeries(y, origin)


def linear_task_target(z, L, f: int, h: int) -> TimeSeries:
    """``y(t) = L^T (z(t+f), ..., z(t), ..., z(t-h))``; defined for ``h <= t < T-f``."""
    L = np.asarray(L, dtype=float).reshape(-1)
    if L.size != f + h + 1:
        raise ValueError("L must have f+h+1 entries")
    x = np.asarray(z, dtype=float)
    n = x.size - f - h
    if n <= 0:
        raise ValueError("series too short for the task window")
    y = np.zeros(n)
    for j in range(1, f + h + 2):
        off = h + f + 1 - j
        y += L[j - 1] * x[off : off + n]
    origin = z.origin_index if isinstance(z, TimeSeries) else 0
    return TimeSeries(y, origin + h)


def quadratic_task_target(z, Q, f: int, h: int) -> TimeSeries:
    """``y(t) = w(t)^T Q w(t)`` with ``w(t) = (z(t+f), ..., z(t-h))``."""
    Q = np.asarray(Q, dtype=float)
    m = f + h + 1
    if Q.shape != (m, m):
        raise ValueError("Q must be (f+h+1) x (f+h+1)")
    Q = 0.5 * (Q + Q.T)
    x = np.asarray(z, dtype=float)
    n = x.size - f - h
    if n <= 0:
        raise ValueError("series too short for the task window")
    win = np.stack([x[h + f + 1 - j : h + f + 1 - j + n] for j in range(1, m + 1)], axis=1)
    y = np.einsum("ti,ij,tj->t", win, Q, win)
    origin = z.origin_index if isinstance(z, TimeSeries) else 0
    return TimeSeries(y, origin + h)


# -- GARCH(1,1) ---------------------------------------------------------------


@numba.njit(cache=True)
def _garch_loop(zeta, alpha0, alpha1, beta, s2_init):
    n = zeta.size
    z = np.empty(n)
    s2 = np.empty(n)
    s2_prev = s2_init
    z_prev = 0.0
    for t in range(n):
        if t == 0:
            cur = s2_init
        else:
            cur = alpha0 + alpha1 * z_prev * z_prev + beta * s2_prev
        s2[t] = cur
        z[t] = math.sqrt(cur) * zeta[t]
        s2_prev = cur
        z_prev = z[t]
    return z, s2


def garch_simulate(
    model: GarchModel,
    length: int,
    seed: int,
    burn_in: int = 1000,
    distribution: str = "gaussian",
) -> tuple[TimeSeries, TimeSeries]:
    """Simulate returns and conditional variances ``(z, sigma2)``."""
    _check_distribution(distribution)
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal(length + burn_in)
    z, s2 = _garch_loop(zeta, model.alpha0, model.alpha1, model.beta, model.unconditional_variance)
    return TimeSeries(z[burn_in:]), TimeSeries(s2[burn_in:])


def garch_aggregate_variance_forecast(
    model: GarchModel, z_T: float, sigma2_T: float, f: int
) -> float:
    """Conditional variance of ``z(T+1) + ... + z(T+f)`` given time-``T`` information."""
    if f < 1:
        raise ValueError("f must be >= 1")
    pers = model.persistence
    s2_next = model.alpha0 + model.alpha1 * z_T**2 + model.beta * sigma2_T
    ubar = model.unconditional_variance
    if pers == 0.0:
        geo = 1.0
    else:
        geo = (1.0 - pers**f) / (1.0 - pers)
    return f * ubar + (s2_next - ubar) * geo


def garch_quadratic_task(f: int) -> np.ndarray:
    """Task matrix with ``w^T Q w = (w_1 + ... + w_f)^2``."""
    if f < 1:
        raise ValueError("f must be >= 1")
    return np.ones((f, f))


# -- ARSV ---------------------------------------------------------------------


def arsv_simulate(
    model: ArsvModel,
    length: int,
    seed: int,
    burn_in: int = 1000,
    distribution: str = "gaussian",
) -> tuple[TimeSeries, TimeSeries, TimeSeries]:
    """Simulate returns, volatility and log-variance ``(z, sigma, b)``.

    The return and log-variance shocks come from independent child streams of
    ``seed``; ``b`` starts from its stationary law.
    """
    _check_distribution(distribution)
    if length < 1:
        raise ValueError("length must be >= 1")
    n = length + burn_in
    ss = np.random.SeedSequence(seed)
    rng_zeta, rng_w, rng_init = (np.random.default_rng(s) for s in ss.spawn(3))
    zeta = rng_zeta.standard_normal(n)
    w = rng_w.normal(0.0, model.sigma_w, size=n)
    b_init = rng_init.normal(model.b_mean, math.sqrt(model.sigma_b2))
    # b(t) - alpha b(t-1) = lam + w(t), with b(-1) = b_init
    b, _ = lfilter([1.0], [1.0, -model.alpha], model.lam + w, zi=[model.alpha * b_init])
    sigma = np.exp(0.5 * b)
    z = model.r + sigma * zeta
    return (
        TimeSeries(z[burn_in:]),
        TimeSeries(sigma[burn_in:]),
        TimeSeries(b[burn_in:]),
    )


def arsv_squared_autocorr_approx(model: ArsvModel, h: int) -> float:
    """Approximate autocorrelation of squared demeaned returns at lag ``h >= 1``."""
    if h < 1:
        raise ValueError("h must be >= 1")
    e = math.exp(model.sigma_b2)
    return (e - 1.0) / (3.0 * e - 1.0) * model.alpha**h
