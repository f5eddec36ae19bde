"""Closed-form capacities of the linearized reservoir model

    x(t) = x0 + A (x(t-1) - x0) + eps(t),    eps_j(t) = sum_{r=1..R} a_r^j z(t)^r.

Every expectation below is assembled from automoments of the input (or
comoments with the teaching signal) through an :class:`AutomomentProvider`.
Infinite sums over powers of ``A`` are cut when a certified (or, failing
that, spectral-radius based) tail bound drops below ``TruncationPolicy.tol``
times the natural scale of the quantity being summed.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import linalg

from .errors import (
    InvalidModel,
    MissingMoment,
    NonFiniteState,
    SingularGamma,
    TruncationBudgetExceeded,
)
from .series_core import AutomomentProvider, ComomentTable, TimeSeries
from .tdr import (
    StatePath,
    TdrParams,
    build_input_polynomials,
    build_jacobian,
    solve_fixed_point,
)

__all__ = [
    "ReservoirModel",
    "TruncationPolicy",
    "LinearTask",
    "QuadraticTask",
    "FilterTask",
    "CapacityReport",
    "epsilon_mean",
    "epsilon_autocovariance",
    "state_mean",
    "state_autocovariance0",
    "linear_task_cov",
    "linear_task_var",
    "quadratic_task_cov",
    "filter_task_cov",
    "capacity",
    "task_capacity",
    "simulate_model_recursion",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TruncationPolicy:
    tol: float = 1e-10
    k_max: int = 2000
    h_max: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.h_max < 0:
            raise ValueError("h_max must be >= 0")


class ReservoirModel:
    """Fixed point ``x0``, transition matrix ``A`` and input polynomial
    coefficients ``poly[r-1, j]`` (no constant term)."""

    def __init__(self, x0, A, poly):
        self.x0 = np.array(x0, dtype=float).reshape(-1)
        self.A = np.array(A, dtype=float)
        self.poly = np.atleast_2d(np.array(poly, dtype=float))
        N = self.x0.size
        if self.A.shape != (N, N) or self.poly.shape[1] != N:
            raise ValueError("inconsistent dimensions for x0, A and poly")
        self.R = self.poly.shape[0]
        self.spectral_radius = float(np.max(np.abs(np.linalg.eigvals(self.A)))) if N else 0.0
        if not self.spectral_radius < 1.0:
            raise InvalidModel(f"spectral radius {self.spectral_radius:.6g} >= 1: no stationary solution")
        for arr in (self.x0, self.A, self.poly):
            arr.setflags(write=False)

    @property
    def N(self) -> int:
        return self.x0.size

    @property
    def inf_norm(self) -> float:
        return float(np.max(np.sum(np.abs(self.A), axis=1)))

    @classmethod
    def from_tdr(cls, params: TdrParams, R: int, x0: float | None = None) -> "ReservoirModel":
        if x0 is None:
            x0 = solve_fixed_point(params.kernel, params.theta).x0
        return cls(
            np.full(params.N, x0),
            build_jacobian(params, x0),
            build_input_polynomials(params, x0, R),
        )

    def epsilon(self, z) -> np.ndarray:
        """``eps(t)`` rows for each input value."""
        z = np.asarray(z, dtype=float).reshape(-1)
        out = np.zeros((z.size, self.N))
        zp = np.ones_like(z)
        for r in range(self.R):
            zp = zp * z
            out += np.outer(zp, self.poly[r])
        return out

    def __repr__(self) -> str:
        return f"ReservoirModel(N={self.N}, R={self.R}, rho={self.spectral_radius:.4g})"


@dataclass(frozen=True)
class LinearTask:
    L: np.ndarray
    f: int
    h: int

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float).reshape(-1)
        if self.f < 0 or self.h < 0:
            raise ValueError("f and h must be >= 0")
        if L.size != self.f + self.h + 1:
            raise ValueError("L must have f+h+1 entries")
        object.__setattr__(self, "L", L)


@dataclass(frozen=True)
class QuadraticTask:
    Q: np.ndarray
    f: int
    h: int

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        m = self.f + self.h + 1
        if self.f < 0 or self.h < 0:
            raise ValueError("f and h must be >= 0")
        if Q.shape != (m, m):
            raise ValueError("Q must be (f+h+1) x (f+h+1)")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))


@dataclass(frozen=True)
class FilterTask:
    comoments: ComomentTable
    var_y: float
    mean_y: float

    def __post_init__(self):
        if not self.var_y > 0:
            raise ValueError("var_y must be positive")


@dataclass
class CapacityReport:
    capacity: float
    mse: float
    gamma0_condition: float
    truncation_terms_used: int
    var_y: float
    cov_yx: np.ndarray
    Gamma0: np.ndarray
    capacity_raw: float = float("nan")
    lam: float = 0.0

    @property
    def nmse(self) -> float:
        return 1.0 - self.capacity

    def to_dict(self, include_matrices: bool = True) -> dict:
        d = {
            "capacity": self.capacity,
            "capacity_raw": self.capacity_raw,
            "nmse": self.nmse,
            "mse": self.mse,
            "lambda": self.lam,
            "gamma0_condition": self.gamma0_condition,
            "truncation_terms_used": self.truncation_terms_used,
            "components": {"var_y": self.var_y},
        }
        if include_matrices:
            d["components"]["cov_yx"] = [float(v) for v in self.cov_yx]
            d["components"]["Gamma0"] = [[float(v) for v in row] for row in self.Gamma0]
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2)


# -- input-driven moments ----------------------------------------------------------


def _raw_moments(moments: AutomomentProvider, R: int) -> np.ndarray:
    return np.array([moments.mu((r,)) for r in range(1, R + 1)])


def epsilon_mean(model: ReservoirModel, moments: AutomomentProvider) -> np.ndarray:
    """``mu_eps^j = sum_r a_r^j mu_z^r``."""
    return model.poly.T @ _raw_moments(moments, model.R)


def _pair_moments(moments: AutomomentProvider, R: int, h: int) -> np.ndarray:
    """``M[r-1, s-1] = mu_z^{r,s}(h)``."""
    M = np.empty((R, R))
    for r in range(1, R + 1):
        for s in range(1, R + 1):
            M[r - 1, s - 1] = moments.mu((r, s), (h,))
    return M


def epsilon_autocovariance(
    model: ReservoirModel, moments: AutomomentProvider, h: int
) -> np.ndarray:
    """``Gamma_eps(h)_{ij} = E[eps_i(t) eps_j(t+h)] - mu_eps^i mu_eps^j``."""
    raw = _raw_moments(moments, model.R)
    # center before projecting so independent lags cancel exactly
    C = _pair_moments(moments, model.R, h) - np.outer(raw, raw)
    return model.poly.T @ C @ model.poly


def state_mean(model: ReservoirModel, moments: AutomomentProvider) -> np.ndarray:
    """``mu_x = x0 + (I - A)^{-1} mu_eps``."""
    mu_eps = epsilon_mean(model, moments)
    return model.x0 + np.linalg.solve(np.eye(model.N) - model.A, mu_eps)


def _tail_factor(model: ReservoirModel) -> float:
    """Multiplier turning ``||A^k||`` into a bound on ``sum_{i>=k} ||A^i||``."""
    nrm = model.inf_norm
    if nrm < 1.0:
        return 1.0 / (1.0 - nrm)
    # no certified sub-multiplicative bound; spectral-radius heuristic
    return 1.0 / (1.0 - model.spectral_radius)


def state_autocovariance0(
    model: ReservoirModel,
    moments: AutomomentProvider,
    policy: TruncationPolicy = TruncationPolicy(),
    return_terms: bool = False,
):
    """Lag-zero state autocovariance from the double series over powers of ``A``.

    The series is regrouped by input lag ``m``:
    ``Gamma(0) = S_0 + sum_{m=1..h_max} (S_m + S_m^T)`` with
    ``S_m = sum_j A^j Gamma_eps(m) (A^{j+m})^T``; input lags beyond ``h_max``
    contribute nothing.
    """
    A = model.A
    N = model.N
    g0 = epsilon_autocovariance(model, moments, 0)
    scale = max(float(np.max(np.abs(g0))), np.finfo(float).tiny)
    thresh = policy.tol * scale
    tail = _tail_factor(model)

    gamma = np.zeros((N, N))
    Am = np.eye(N)
    terms = 0
    for m in range(policy.h_max + 1):
        if m > 0:
            Am = Am @ A
        gm = g0 if m == 0 else epsilon_autocovariance(model, moments, m)
        term = gm @ Am.T
        S = np.zeros((N, N))
        for j in range(policy.k_max + 1):
            S += term
            terms += 1
            if np.max(np.abs(term)) * tail < thresh:
                break
            term = A @ term @ A.T
        else:
            raise TruncationBudgetExceeded(
                f"Gamma(0) series for lag {m} not converged after {policy.k_max} terms"
            )
        gamma += S if m == 0 else S + S.T
    gamma = 0.5 * (gamma + gamma.T)
    return (gamma, terms) if return_terms else gamma


def _power_series(model, centered_term, k_cut, bound_at, policy, label):
    """``sum_{k>=0} A^k c_k`` with ``c_k = centered_term(k)``.

    Stops once ``k`` passes ``k_cut`` (all later terms vanish exactly) or the
    tail bound ``||A^k|| * bound_at / (1 - ||A||)`` drops below ``bound_at``'s
    tolerance threshold.
    """
    A = model.A
    tail = _tail_factor(model)
    cbound, thresh = bound_at
    acc = np.zeros(model.N)
    Ak = np.eye(model.N)
    for k in range(policy.k_max + 1):
        if k_cut is not None and k > k_cut:
            return acc, k
        acc += Ak @ centered_term(k)
        Ak = Ak @ A
        if np.max(np.sum(np.abs(Ak), axis=1)) * cbound * tail < thresh:
            return acc, k + 1
    raise TruncationBudgetExceeded(f"{label} series not converged after {policy.k_max} terms")


def linear_task_var(moments: AutomomentProvider, task: LinearTask) -> tuple[float, float]:
    """``(mean, variance)`` of ``y(t) = L^T (z(t+f), ..., z(t-h))``."""
    m = task.L.size
    mu = moments.mean
    gz = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            gz[i, j] = moments.mu((1, 1), (i - j,))
    var = float(task.L @ (gz - mu**2) @ task.L)
    return float(mu * task.L.sum()), var


def linear_task_cov(
    model: ReservoirModel,
    moments: AutomomentProvider,
    task: LinearTask,
    policy: TruncationPolicy = TruncationPolicy(),
    return_terms: bool = False,
):
    """``Cov(y(t), x(t))`` for ``y(t) = sum_j L_j z(t+f+1-j)``.

    Term ``(j, k)`` pairs ``z(t+f+1-j)`` with ``eps(t-k)``, i.e. the moments
    ``mu_z^{1,s}(j-f-1-k)``.
    """
    L, f = task.L, task.f
    m = L.size
    R = model.R
    mu_z = moments.mean
    mu_eps = epsilon_mean(model, moments)
    a = model.poly  # (R, N)

    def centered(k):
        c = np.zeros(model.N)
        for j in range(1, m + 1):
            if L[j - 1] == 0.0:
                continue
            lag = j - f - 1 - k
            u = np.array([moments.mu((1, s), (lag,)) for s in range(1, R + 1)])
            c += L[j - 1] * (a.T @ u - mu_z * mu_eps)
        return c

    raw = _raw_moments(moments, 2 * R)
    # |E[z z'^s]| <= sqrt(mu^2 mu^{2s})
    cbound = np.abs(L).sum() * float(
        np.max(np.abs(a).T @ np.sqrt(np.abs(raw[1]) * np.abs(raw[1::2][:R])) + np.abs(mu_z * mu_eps))
    )
    g0diag = np.diag(epsilon_autocovariance(model, moments, 0))
    _, var_y = linear_task_var(moments, task)
    scale = math.sqrt(max(var_y, 0.0) * max(float(np.max(g0diag)), 0.0)) or np.finfo(float).tiny
    k_cut = _lag_cut(moments, m - f - 1)
    cov, terms = _power_series(model, centered, k_cut, (cbound, policy.tol * scale), policy, "linear task")
    return (cov, terms) if return_terms else cov


def _lag_cut(moments: AutomomentProvider, offset: int) -> int | None:
    hmax = getattr(moments, "max_abs_lag", None)
    return None if hmax is None else max(offset, 0) + hmax


def quadratic_task_moments(moments: AutomomentProvider, task: QuadraticTask) -> tuple[float, float]:
    """``(mean, variance)`` of ``y(t) = w(t)^T Q w(t)``."""
    Q = task.Q
    m = Q.shape[0]
    idx = range(1, m + 1)
    mu_y = sum(Q[i - 1, j - 1] * moments.mu((1, 1), (i - j,)) for i in idx for j in idx)
    ey2 = 0.0
    for i in idx:
        for j in idx:
            qij = Q[i - 1, j - 1]
            if qij == 0.0:
                continue
            for k in idx:
                for l in idx:
                    qkl = Q[k - 1, l - 1]
                    if qkl:
                        ey2 += qij * qkl * moments.mu((1, 1, 1, 1), (i - j, i - k, i - l))
    return float(mu_y), float(ey2 - mu_y**2)


def quadratic_task_cov(
    model: ReservoirModel,
    moments: AutomomentProvider,
    task: QuadraticTask,
    policy: TruncationPolicy = TruncationPolicy(),
    return_terms: bool = False,
):
    """``(var_y, Cov(y(t), x(t)))`` for the quadratic task.

    Term ``k`` needs ``E[z(t+f+1-i) z(t+f+1-j) eps(t-k)]``, i.e. the moments
    ``mu_z^{1,1,s}(i-j, i-k-f-1)``, looked up through the reduction rules.
    """
    Q, f = task.Q, task.f
    m = Q.shape[0]
    R = model.R
    a = model.poly
    mu_eps = epsilon_mean(model, moments)
    mu_y, var_y = quadratic_task_moments(moments, task)
    pairs = [(i, j, Q[i - 1, j - 1]) for i in range(1, m + 1) for j in range(1, m + 1) if Q[i - 1, j - 1] != 0.0]

    def centered(k):
        w = np.zeros(R)
        for i, j, q in pairs:
            w += q * np.array([moments.mu((1, 1, s), (i - j, i - k - f - 1)) for s in range(1, R + 1)])
        return a.T @ w - mu_y * mu_eps

    if not pairs:
        zero = np.zeros(model.N)
        return ((var_y, zero), 0) if return_terms else (var_y, zero)
    raw = _raw_moments(moments, 2 * R)
    m4 = abs(moments.mu((4,)))
    # Hoelder: |E[z z' z''^s]| <= sqrt(mu^4) sqrt(mu^{2s})
    cbound = np.abs(Q).sum() * float(
        np.max(np.abs(a).T @ (math.sqrt(m4) * np.sqrt(np.abs(raw[1::2][:R]))) + np.abs(mu_y * mu_eps))
    )
    g0diag = np.diag(epsilon_autocovariance(model, moments, 0))
    scale = math.sqrt(max(var_y, 0.0) * max(float(np.max(g0diag)), 0.0)) or np.finfo(float).tiny
    k_cut = _lag_cut(moments, 2 * m - f)
    cov, terms = _power_series(model, centered, k_cut, (cbound, policy.tol * scale), policy, "quadratic task")
    return ((var_y, cov), terms) if return_terms else (var_y, cov)


def filter_task_cov(
    model: ReservoirModel,
    comoments: ComomentTable,
    mean_z: float,
    mu_eps: np.ndarray,
    policy: TruncationPolicy = TruncationPolicy(),
    mean_y: float | None = None,
    strict_printed: bool = False,
    return_terms: bool = False,
):
    """``Cov(y(t), x(t)) = sum_j A^j (u_j - mu_y mu_eps)`` with
    ``(u_j)_i = sum_r a_r^i mu_{y,z}^r(-j)`` for ``0 <= j <= h_max``.

    ``strict_printed=True`` centers with ``mean_z`` instead of ``mean_y``.
    """
    if mean_y is None:
        mean_y = comoments.mean_y
    if not strict_printed and not math.isfinite(mean_y):
        raise MissingMoment("teaching-signal mean required for the filter covariance")
    center = mean_z if strict_printed else mean_y
    R = model.R
    if comoments.max_order < R:
        raise MissingMoment(f"comoments up to order {R} required, table has {comoments.max_order}")
    a = model.poly
    cov = np.zeros(model.N)
    Aj = np.eye(model.N)
    terms = 0
    for j in range(min(policy.h_max, policy.k_max) + 1):
        u = np.array([comoments.value(r, -j) for r in range(1, R + 1)])
        cov += Aj @ (a.T @ u - center * mu_eps)
        terms += 1
        Aj = Aj @ model.A
        if not np.any(Aj):
            break
    return (cov, terms) if return_terms else cov


# -- capacity ---------------------------------------------------------------------


def capacity(Gamma0, cov_yx, var_y: float, lam: float, terms_used: int = 0) -> CapacityReport:
    """Capacity of the optimal ridge readout

    ``C = cov^T (G + lam I)^{-1} (G + 2 lam I) (G + lam I)^{-1} cov / var_y``.
    """
    if not var_y > 0:
        raise ValueError("var_y must be positive")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    G = np.asarray(Gamma0, dtype=float)
    G = 0.5 * (G + G.T)
    cov = np.asarray(cov_yx, dtype=float).reshape(-1)
    N = G.shape[0]
    w, V = linalg.eigh(G)
    wmax = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    if np.min(w) < 0:
        if -np.min(w) > 1e-8 * wmax:
            warnings.warn(f"Gamma(0) has a negative eigenvalue {np.min(w):.3g}; flooring at 0")
        w = np.maximum(w, 0.0)
        G = (V * w) @ V.T
    M = G + lam * np.eye(N)
    shifted = w + lam
    cond = float(np.max(shifted) / np.min(shifted)) if np.min(shifted) > 0 else math.inf
    if lam == 0.0 and (np.min(shifted) <= 1e-14 * wmax):
        raise SingularGamma("Gamma(0) is singular and lambda = 0")
    try:
        W = linalg.cho_solve(linalg.cho_factor(M, lower=True), cov)
    except linalg.LinAlgError:
        if lam == 0.0:
            raise SingularGamma("Gamma(0) is singular and lambda = 0") from None
        W = V @ ((V.T @ cov) / shifted)
    num = float(W @ (G @ W) + 2.0 * lam * (W @ W))
    raw = num / var_y
    cap = min(1.0, max(0.0, raw))
    if abs(cap - raw) > 1e-8:
        warnings.warn(f"unclamped capacity {raw:.6g} outside [0, 1]")
    return CapacityReport(
        capacity=cap,
        mse=var_y * (1.0 - cap),
        gamma0_condition=cond,
        truncation_terms_used=int(terms_used),
        var_y=float(var_y),
        cov_yx=cov,
        Gamma0=G,
        capacity_raw=raw,
        lam=float(lam),
    )


def task_capacity(
    model: ReservoirModel,
    moments: AutomomentProvider,
    task,
    lam: float,
    policy: TruncationPolicy = TruncationPolicy(),
    strict_printed: bool = False,
) -> CapacityReport:
    """Full pipeline: ``Gamma(0)``, task covariance and variance, then capacity."""
    gamma0, t_gamma = state_autocovariance0(model, moments, policy, return_terms=True)
    if isinstance(task, LinearTask):
        cov, t_cov = linear_task_cov(model, moments, task, policy, return_terms=True)
        _, var_y = linear_task_var(moments, task)
    elif isinstance(task, QuadraticTask):
        (var_y, cov), t_cov = quadratic_task_cov(model, moments, task, policy, return_terms=True)
    elif isinstance(task, FilterTask):
        mu_eps = epsilon_mean(model, moments)
        cov, t_cov = filter_task_cov(
            model, task.comoments, moments.mean, mu_eps, policy,
            mean_y=task.mean_y, strict_printed=strict_printed, return_terms=True,
        )
        var_y = task.var_y
    else:
        raise TypeError(f"unsupported task {type(task).__name__}")
    return capacity(gamma0, cov, var_y, lam, t_gamma + t_cov)


# -- Monte Carlo oracle ---------------------------------------------------------------


@numba.njit(cache=True)
def _linear_recursion(eps, A, x0, x_init):
    T, N = eps.shape
    out = np.empty((T, N))
    dev = x_init - x0
    for t in range(T):
        dev = A @ dev + eps[t]
        out[t] = x0 + dev
    return out


def simulate_model_recursion(model: ReservoirModel, input, x_init=None) -> StatePath:
    """Iterate the model recursion; ``x_init`` (the state at ``t = -1``) defaults to ``x0``."""
    z = np.asarray(input, dtype=float).reshape(-1)
    origin = input.origin_index if isinstance(input, TimeSeries) else 0
    x_init = model.x0 if x_init is None else np.asarray(x_init, dtype=float).reshape(model.N)
    eps = model.epsilon(z)
    out = _linear_recursion(eps, np.ascontiguousarray(model.A), model.x0.copy(), x_init.copy())
    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        raise NonFiniteState("model recursion overflow", t=origin + int(np.argmax(bad)))
    return StatePath(out, origin)
