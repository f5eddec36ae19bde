"""Kalman filter baseline for ARSV log-variance filtering.

The ARSV model becomes linear in the log-variance ``b(t)`` once returns are
demeaned, squared and logged:

    g(t) = log((z(t) - r)^2) = b(t) + u(t),   u(t) = log zeta(t)^2,

with ``E[u] = E[log chi2_1]`` and ``var(u) = pi^2 / 2``. The filter treats
``u`` as Gaussian noise with those two moments (quasi-maximum likelihood
form), so it is the best *linear* filter only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ZeroVarianceTeaching
from .generators import ArsvModel
from .series_core import TimeSeries

__all__ = [
    "LOG_CHI2_MEAN",
    "LOG_CHI2_VAR",
    "KalmanState",
    "arsv_kalman_filter",
    "kalman_volatility_nmse",
    "kalman_nmse_summary",
    "steady_state_variance",
    "TRANSFORMS",
]

LOG_CHI2_MEAN = -1.270362845461
LOG_CHI2_VAR = math.pi**2 / 2
JITTER = 1e-12

TRANSFORMS = {
    "identity": lambda b: b,  # log sigma^2
    "exp_half": lambda b: np.exp(0.5 * b),  # sigma
    "exp": lambda b: np.exp(b),  # sigma^2
    "log_half": lambda b: 0.5 * b,  # log sigma
}


@dataclass(frozen=True)
class KalmanState:
    """Filtered ``b(t|t)`` and one-step predicted ``b(t|t-1)`` paths with variances."""

    b_hat: TimeSeries
    P: TimeSeries
    b_pred: TimeSeries
    P_pred: TimeSeries

    def to_csv(self, path) -> None:
        """Columns ``t, b_hat, P, b_pred, P_pred``."""
        t = self.b_hat.times
        data = np.column_stack([t, self.b_hat.values, self.P.values, self.b_pred.values, self.P_pred.values])
        np.savetxt(path, data, delimiter=",", header="t,b_hat,P,b_pred,P_pred", comments="", fmt="%.17g")


@numba.njit(cache=True)
def _kalman_loop(obs, lam, alpha, q, h, m0, p0):
    n = obs.size
    bf = np.empty(n)
    pf = np.empty(n)
    bp = np.empty(n)
    pp = np.empty(n)
    b_prev = 0.0
    p_prev = 0.0
    for t in range(n):
        if t == 0:
            b_pr = m0
            p_pr = p0
        else:
            b_pr = lam + alpha * b_prev
            p_pr = alpha * alpha * p_prev + q
        gain = p_pr / (p_pr + h)
        b_prev = b_pr + gain * (obs[t] - b_pr)
        p_prev = (1.0 - gain) * p_pr
        bp[t] = b_pr
        pp[t] = p_pr
        bf[t] = b_prev
        pf[t] = p_prev
    return bf, pf, bp, pp


def arsv_kalman_filter(z, model: ArsvModel, obs_offset: float = LOG_CHI2_MEAN) -> KalmanState:
    """Filter log-variances from returns, with the true model parameters."""
    x = np.asarray(z, dtype=float).reshape(-1)
    origin = z.origin_index if isinstance(z, TimeSeries) else 0
    g = np.log((x - model.r) ** 2 + JITTER) - obs_offset
    bf, pf, bp, pp = _kalman_loop(
        g, model.lam, model.alpha, model.sigma_w**2, LOG_CHI2_VAR, model.b_mean, model.sigma_b2
    )
    return KalmanState(
        TimeSeries(bf, origin), TimeSeries(pf, origin), TimeSeries(bp, origin), TimeSeries(pp, origin)
    )


def steady_state_variance(model: ArsvModel) -> float:
    """Positive root of the filtered-variance Riccati fixed point."""
    a2, q, h = model.alpha**2, model.sigma_w**2, LOG_CHI2_VAR
    # predicted variance p solves p = a2 * p h / (p + h) + q
    # => p^2 + (h - a2 h - q) p - q h = 0
    bcoef = h - a2 * h - q
    p = 0.5 * (-bcoef + math.sqrt(bcoef**2 + 4 * q * h))
    return p * h / (p + h)


def kalman_volatility_nmse(b_hat, truth, transform: str = "identity", washout: int = 0) -> float:
    """NMSE of ``transform(b_hat)`` against the true transformed volatility."""
    if transform not in TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}; expected one of {sorted(TRANSFORMS)}")
    pred = TRANSFORMS[transform](np.asarray(b_hat, dtype=float))[washout:]
    y = np.asarray(truth, dtype=float)[washout:]
    if pred.shape != y.shape:
        raise ValueError("estimate and truth must be aligned")
    var = y.var()
    if not var > 0:
        raise ZeroVarianceTeaching("target has zero variance")
    return float(np.mean((pred - y) ** 2) / var)


def kalman_nmse_summary(state: KalmanState, b_true, washout: int = 0) -> dict:
    """NMSE per transform for the filtered and the one-step predicted estimates."""
    b = np.asarray(b_true, dtype=float)
    out = {}
    for name, est in (("filtered", state.b_hat), ("predicted", state.b_pred)):
        out[name] = {
            tr: kalman_volatility_nmse(est, TRANSFORMS[tr](b), tr, washout) for tr in TRANSFORMS
        }
    return out
