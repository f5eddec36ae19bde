"""Discrete-time time-delay reservoirs.

Neuron ``i`` of layer ``t`` is updated as

    x_i(t) = e^{-xi} x_{i-1}(t) + (1 - e^{-xi}) f(x_i(t-1), c_i z(t), theta),
    x_0(t) = x_N(t-1),     xi = log(1 + d),

which is a cascade in ``i``. The Ikeda kernel ``f = eta sin^2(x + gamma I + phi)``
runs through a compiled loop; any other :class:`KernelMap` uses the Python path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import linalg

from .errors import NoConvergence, NonFiniteState, SingularSystem, ZeroVarianceTeaching
from .series_core import TimeSeries

__all__ = [
    "KernelMap",
    "IkedaKernel",
    "CallableKernel",
    "TdrParams",
    "StatePath",
    "FixedPoint",
    "ReadoutConfig",
    "Readout",
    "random_mask",
    "tdr_step",
    "tdr_step_unrolled",
    "tdr_run",
    "solve_fixed_point",
    "build_jacobian",
    "build_input_polynomials",
    "train_readout",
    "predict",
    "evaluate_nmse",
    "capacity_from_nmse",
    "align",
    "REFERENCE_IKEDA_THETA",
    "REFERENCE_D",
]

REFERENCE_IKEDA_THETA = (0.461, 2.866, 1.124)  # (eta, gamma, phi)
REFERENCE_D = 0.839


class KernelMap:
    """Scalar kernel ``f(x, I, theta)`` with partial derivatives.

    Subclasses must accept numpy arrays for ``x`` and ``I``.
    """

    name = "kernel"

    def value(self, x, I, theta):  # pragma: no cover - interface
        raise NotImplementedError

    def dx(self, x, I, theta):
        h = 1e-5 * max(1.0, float(np.max(np.abs(x))))
        return (self.value(x + h, I, theta) - self.value(x - h, I, theta)) / (2 * h)

    def dI(self, order: int, x, I, theta):
        """``order``-th partial derivative in the input argument."""
        if order == 0:
            return self.value(x, I, theta)
        # central differences, adequate for low orders only
        h = 1e-3
        coeffs = np.array([math.comb(order, k) * (-1) ** k for k in range(order + 1)])
        acc = 0.0
        for k, c in enumerate(coeffs):
            acc = acc + c * self.value(x, I + (order / 2 - k) * h, theta)
        return acc / h**order


class IkedaKernel(KernelMap):
    """``f(x, I, theta) = eta sin^2(x + gamma I + phi)`` with ``theta = (eta, gamma, phi)``."""

    name = "ikeda"

    def value(self, x, I, theta):
        eta, gamma, phi = theta
        return eta * np.sin(x + gamma * I + phi) ** 2

    def dx(self, x, I, theta):
        eta, gamma, phi = theta
        return eta * np.sin(2.0 * (x + gamma * I + phi))

    def dI(self, order: int, x, I, theta):
        eta, gamma, phi = theta
        if order == 0:
            return self.value(x, I, theta)
        # f = eta/2 (1 - cos(2u)), u = x + gamma I + phi
        arg = 2.0 * (x + gamma * I + phi) + order * math.pi / 2
        return -0.5 * eta * (2.0 * gamma) ** order * np.cos(arg)


class CallableKernel(KernelMap):
    """Kernel from plain callables; missing derivatives use finite differences."""

    def __init__(
        self,
        func: Callable,
        dx: Callable | None = None,
        dI: Callable | None = None,
        name: str = "callable",
    ):
        self._f = func
        self._dx = dx
        self._dI = dI
        self.name = name

    def value(self, x, I, theta):
        return self._f(x, I, theta)

    def dx(self, x, I, theta):
        return self._dx(x, I, theta) if self._dx else super().dx(x, I, theta)

    def dI(self, order, x, I, theta):
        if self._dI is not None and order > 0:
            return self._dI(order, x, I, theta)
        return super().dI(order, x, I, theta)


def random_mask(N: int, seed: int) -> np.ndarray:
    """Input mask with IID entries uniform on [-1, 1]."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=N)


@dataclass(frozen=True)
class TdrParams:
    N: int
    d: float
    kernel: KernelMap
    theta: tuple
    mask: np.ndarray

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.d > 0:
            raise ValueError("neuron separation d must be positive")
        mask = np.array(self.mask, dtype=float).reshape(-1)
        if mask.size != self.N or not np.all(np.isfinite(mask)):
            raise ValueError("mask must have N finite entries")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))

    @property
    def xi(self) -> float:
        return math.log1p(self.d)

    @property
    def decay(self) -> float:
        return math.exp(-self.xi)

    @property
    def tau(self) -> float:
        return self.N * self.d

    def replace(self, **changes) -> "TdrParams":
        kw = dict(N=self.N, d=self.d, kernel=self.kernel, theta=self.theta, mask=self.mask)
        kw.update(changes)
        return TdrParams(**kw)


@dataclass(frozen=True)
class StatePath:
    """Reservoir layers ``x(t)`` stacked as rows."""

    states: np.ndarray
    origin_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2:
            raise ValueError("states must be a (T, N) array")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteState("state path contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "states", arr)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def N(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.origin_index, self.origin_index + len(self))

    def window(self, start: int, stop: int) -> "StatePath":
        return StatePath(self.states[start:stop], self.origin_index + start)

    def to_csv(self, path) -> None:
        header = ",".join(["t"] + [f"x_{i + 1}" for i in range(self.N)])
        data = np.column_stack([self.times, self.states])
        fmt = ["%d"] + ["%.17g"] * self.N
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


# -- reservoir map --------------------------------------------------------------


def tdr_step(x_prev, z_t: float, params: TdrParams) -> np.ndarray:
    """One layer update, evaluated neuron by neuron."""
    x_prev = np.asarray(x_prev, dtype=float)
    fvals = params.kernel.value(x_prev, params.mask * z_t, params.theta)
    fvals = np.broadcast_to(np.asarray(fvals, dtype=float), x_prev.shape)
    e, w = params.decay, 1.0 - params.decay
    out = np.empty(params.N)
    left = x_prev[-1]
    for i in range(params.N):
        left = e * left + w * fvals[i]
        out[i] = left
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("neuron overflow")
    return out


def _cascade_matrices(params: TdrParams) -> tuple[np.ndarray, np.ndarray]:
    """Lower-triangular ``(1-e) e^{(j-k) * -xi}`` block and the ``e^{-j xi}`` column."""
    j = np.arange(1, params.N + 1)
    diff = j[:, None] - j[None, :]
    lower = np.where(diff >= 0, np.exp(-params.xi * np.maximum(diff, 0)), 0.0)
    return (1.0 - params.decay) * lower, np.exp(-params.xi * j)


def tdr_step_unrolled(x_prev, z_t: float, params: TdrParams) -> np.ndarray:
    """Same update written as one triangular matrix product (test oracle)."""
    x_prev = np.asarray(x_prev, dtype=float)
    tri, col = _cascade_matrices(params)
    fvals = params.kernel.value(x_prev, params.mask * z_t, params.theta)
    return col * x_prev[-1] + tri @ np.broadcast_to(fvals, x_prev.shape)


@numba.njit(cache=True)
def _ikeda_run(z, mask, eta, gamma, phi, decay, x_init):
    T = z.size
    N = mask.size
    out = np.empty((T, N))
    x = x_init.copy()
    w = 1.0 - decay
    for t in range(T):
        left = x[N - 1]
        zt = z[t]
        for i in range(N):
            s = math.sin(x[i] + gamma * mask[i] * zt + phi)
            left = decay * left + w * eta * s * s
            x[i] = left
        if not np.isfinite(left):
            return out, t
        out[t] = x
    return out, -1


def tdr_run(input, params: TdrParams, x_init=None) -> StatePath:
    """Drive the reservoir with a scalar series.

    ``x_init`` defaults to the uniform fixed point ``x0 * 1_N``.
    """
    z = np.asarray(input, dtype=float).reshape(-1)
    origin = input.origin_index if isinstance(input, TimeSeries) else 0
    if x_init is None:
        x_init = np.full(params.N, solve_fixed_point(params.kernel, params.theta).x0)
    x_init = np.asarray(x_init, dtype=float).reshape(params.N)
    if isinstance(params.kernel, IkedaKernel):
        eta, gamma, phi = params.theta
        out, bad = _ikeda_run(z, params.mask, eta, gamma, phi, params.decay, x_init)
        if bad >= 0:
            raise NonFiniteState("neuron overflow", t=origin + int(bad))
        return StatePath(out, origin)
    out = np.empty((z.size, params.N))
    x = x_init
    for t in range(z.size):
        try:
            x = tdr_step(x, z[t], params)
        except NonFiniteState:
            raise NonFiniteState("neuron overflow", t=origin + t) from None
        out[t] = x
    return StatePath(out, origin)


# -- linearization ----------------------------------------------------------------


@dataclass(frozen=True)
class FixedPoint:
    x0: float
    slope: float  # d f / d x at (x0, 0)
    iterations: int

    @property
    def stable(self) -> bool:
        return abs(self.slope) < 1.0


def solve_fixed_point(
    kernel: KernelMap,
    theta,
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-14,
    max_iter: int = 200,
) -> FixedPoint:
    """Solve ``x = f(x, 0, theta)`` by Newton steps safeguarded with bisection.

    The default bracket ``[-|eta| - 1, |eta| + 1]`` assumes the first entry of
    ``theta`` bounds the kernel (true for Ikeda).
    """
    theta = tuple(theta)
    if bracket is None:
        amp = abs(theta[0]) if theta else 1.0
        bracket = (-amp - 1.0, amp + 1.0)
    g = lambda x: x - float(kernel.value(x, 0.0, theta))
    dg = lambda x: 1.0 - float(kernel.dx(x, 0.0, theta))
    lo, hi = map(float, bracket)
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return FixedPoint(lo, float(kernel.dx(lo, 0.0, theta)), 0)
    if ghi == 0.0:
        return FixedPoint(hi, float(kernel.dx(hi, 0.0, theta)), 0)
    if glo * ghi > 0:
        raise NoConvergence(f"no sign change of x - f(x) on bracket {bracket}")
    if glo > 0:
        lo, hi = hi, lo
    x = 0.5 * (lo + hi)
    for it in range(1, max_iter + 1):
        gx = g(x)
        if gx == 0.0:
            break
        if gx < 0:
            lo = x
        else:
            hi = x
        slope = dg(x)
        step_ok = slope != 0.0
        if step_ok:
            xn = x - gx / slope
            step_ok = min(lo, hi) < xn < max(lo, hi)
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= tol * max(1.0, abs(x)):
            x = xn
            break
        x = xn
    else:
        raise NoConvergence("fixed point iteration did not converge")
    if abs(g(x)) >= 1e-12:
        raise NoConvergence(f"fixed point residual {abs(g(x)):.3g} too large")
    return FixedPoint(x, float(kernel.dx(x, 0.0, theta)), it)


def build_jacobian(params: TdrParams, x0: float) -> np.ndarray:
    """``A = D_x F(x0 1_N, 0_N, theta)`` for the cascade map."""
    slope = float(params.kernel.dx(x0, 0.0, params.theta))
    tri, col = _cascade_matrices(params)
    A = tri * slope
    A[:, -1] += col
    return A


def build_input_polynomials(params: TdrParams, x0: float, R: int) -> np.ndarray:
    """Coefficients ``a[r-1, j-1]`` of ``eps_j(z) = sum_r a_r^j z^r``.

    ``a_r^j = (1 - e^{-xi}) sum_{k<=j} e^{-(j-k) xi} b_r c_k^r`` with
    ``b_r = d^r f / dI^r (x0, 0) / r!``.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    tri, _ = _cascade_matrices(params)
    a = np.empty((R, params.N))
    for r in range(1, R + 1):
        b_r = float(params.kernel.dI(r, x0, 0.0, params.theta)) / math.factorial(r)
        a[r - 1] = tri @ (b_r * params.mask**r)
    return a


# -- readout ----------------------------------------------------------------------


@dataclass(frozen=True)
class ReadoutConfig:
    lam: float = 1e-10
    washout: int = 200

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("ridge constant must be >= 0")
        if self.washout < 0:
            raise ValueError("washout must be >= 0")


@dataclass(frozen=True)
class Readout:
    W: np.ndarray
    a: float
    lam: float = 0.0
    mask_seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "weights": [float(v) for v in self.W],
                "intercept": float(self.a),
                "lambda": float(self.lam),
                "mask_seed": self.mask_seed,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "Readout":
        d = json.loads(text)
        return cls(np.asarray(d["weights"], dtype=float), float(d["intercept"]), float(d["lambda"]), d.get("mask_seed"))


def align(states: StatePath | np.ndarray, teaching: TimeSeries | np.ndarray):
    """Intersect a state path and a teaching series on their time labels."""
    X = states.states if isinstance(states, StatePath) else np.asarray(states, dtype=float)
    y = np.asarray(teaching, dtype=float).reshape(-1)
    s0 = states.origin_index if isinstance(states, StatePath) else 0
    y0 = teaching.origin_index if isinstance(teaching, TimeSeries) else 0
    start = max(s0, y0)
    stop = min(s0 + X.shape[0], y0 + y.size)
    if stop <= start:
        raise ValueError("state path and teaching signal do not overlap")
    return X[start - s0 : stop - s0], y[start - y0 : stop - y0]


def train_readout(states, teaching, cfg: ReadoutConfig = ReadoutConfig(), mask_seed=None) -> Readout:
    """Ridge readout from sample moments:
    ``W = (Gamma(0) + lam I)^{-1} Cov(y, x)``, ``a = mean(y) - W^T mean(x)``.
    """
    X, y = align(states, teaching)
    X, y = X[cfg.washout :], y[cfg.washout :]
    n, N = X.shape
    if n < N + 1:
        raise ValueError(f"need at least N+1={N + 1} samples after washout, got {n}")
    mx, my = X.mean(axis=0), y.mean()
    Xc = X - mx
    gamma0 = Xc.T @ Xc / n
    cov = Xc.T @ (y - my) / n
    W = _spd_solve(gamma0, cov, cfg.lam)
    return Readout(W, float(my - W @ mx), cfg.lam, mask_seed)


def _spd_solve(gamma0: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    M = gamma0 + lam * np.eye(gamma0.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(M, lower=True), rhs)
    except linalg.LinAlgError:
        pass
    if lam == 0.0:
        raise SingularSystem("Gamma(0) is rank deficient and lambda = 0")
    # lam > 0 but roundoff broke positivity: floor the Gram spectrum at zero
    w, V = linalg.eigh(0.5 * (gamma0 + gamma0.T))
    w = np.maximum(w, 0.0) + lam
    return V @ ((V.T @ rhs) / w)


def predict(states, readout: Readout) -> np.ndarray:
    X = states.states if isinstance(states, StatePath) else np.asarray(states, dtype=float)
    return X @ readout.W + readout.a


def evaluate_nmse(states, readout: Readout, teaching, washout: int = 0) -> float:
    """Mean squared readout error divided by the sample variance of the target."""
    X, y = align(states, teaching)
    X, y = X[washout:], y[washout:]
    var = y.var()
    if not var > 0:
        raise ZeroVarianceTeaching("teaching signal has zero variance")
    resid = X @ readout.W + readout.a - y
    return float(np.mean(resid**2) / var)


def capacity_from_nmse(nmse: float) -> float:
    return float(min(1.0, max(0.0, 1.0 - nmse)))
