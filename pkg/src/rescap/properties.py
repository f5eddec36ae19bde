"""Falsification harnesses for the separation and uniform fading memory properties.

Both checkers run against the exact time-delay reservoir or the linearized
reservoir model. A PASS means no counterexample was found under the probe;
reports carry trial counts and the numerically checkable hypotheses
(eigenvalue magnitudes, monotonicity of the input polynomial on the bounded
input range) so a reader can judge what was actually tested.

Norms are induced infinity norms throughout.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .capacity_model import ReservoirModel, simulate_model_recursion
from .errors import HypothesisViolated
from .generators import REFERENCE_ARSV, ArsvModel, arsv_simulate
from .series_core import TimeSeries
from .tdr import TdrParams, solve_fixed_point, tdr_run

__all__ = [
    "SpProbe",
    "UfmProbe",
    "InputLaw",
    "ModelSystem",
    "TdrSystem",
    "as_system",
    "SeparationReport",
    "FadingMemoryReport",
    "check_separation",
    "check_fading_memory",
    "ufmp_bound",
    "monotone_scan",
]

GAP_FLOOR = 1e-12
SCAN_POINTS = 2001


@dataclass(frozen=True)
class SpProbe:
    """Two inputs that differ only at time ``s`` (by ``delta``)."""

    base_input: TimeSeries
    s: int
    delta: float
    horizon: int

    def __post_init__(self):
        if not isinstance(self.base_input, TimeSeries):
            object.__setattr__(self, "base_input", TimeSeries(self.base_input))
        n = len(self.base_input)
        if not 0 <= self.s < n:
            raise ValueError(f"s={self.s} outside input range [0, {n})")
        if self.horizon < 0 or self.s + self.horizon >= n:
            raise ValueError("s + horizon must stay inside the input")
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")
        if self.delta == 0:
            warnings.warn("delta = 0 makes the two inputs identical; the check fails by design", stacklevel=2)


@dataclass(frozen=True)
class UfmProbe:
    """``epsilon`` target, agreement tolerance ``delta_eps`` on the last ``h_eps + 1`` steps."""

    epsilon: float
    delta_eps: float
    h_eps: int
    trials: int = 1000

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta_eps > 0):
            raise ValueError("epsilon and delta_eps must be positive")
        if self.h_eps < 0 or self.trials < 1:
            raise ValueError("h_eps must be >= 0 and trials >= 1")


@dataclass(frozen=True)
class InputLaw:
    """Bounded input law: samples are clipped to ``[-bound, bound]``.

    ``kind`` is ``uniform`` (on the bound), ``gaussian`` (scaled by ``scale``)
    or ``arsv`` (reference ARSV returns times ``scale``).
    """

    kind: str = "uniform"
    bound: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "arsv"):
            raise ValueError(f"unknown input law {self.kind!r}")
        if not self.bound > 0:
            raise ValueError("bound must be positive")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "uniform":
            z = rng.uniform(-self.bound, self.bound, size=shape)
        elif self.kind == "gaussian":
            z = self.scale * rng.standard_normal(shape)
        else:
            n = int(np.prod(shape))
            seed = int(rng.integers(2**63))
            z = self.scale * np.asarray(arsv_simulate(REFERENCE_ARSV, n, seed)[0]).reshape(shape)
        # keep strictly inside the open ball |z| < k
        k = self.bound * (1 - 1e-12)
        return np.clip(z, -k, k)


def monotone_scan(values: np.ndarray) -> bool:
    d = np.diff(values)
    return bool(np.all(d > 0) or np.all(d < 0))


class ModelSystem:
    """Linearized reservoir model as a checkable system."""

    kind = "model"

    def __init__(self, model: ReservoirModel):
        self.model = model

    @property
    def N(self) -> int:
        return self.model.N

    def run(self, z) -> np.ndarray:
        return simulate_model_recursion(self.model, z).states

    def run_final_batch(self, Z: np.ndarray) -> np.ndarray:
        """Final states for each row of ``Z``, all started at ``x0``."""
        m = self.model
        dev = np.zeros((Z.shape[0], m.N))
        At = m.A.T
        for t in range(Z.shape[1]):
            dev = dev @ At + m.epsilon(Z[:, t])
        return m.x0 + dev

    def lipschitz_and_kmax(self, k: float) -> tuple[float, float]:
        """Polynomial bounds on ``[-k, k]``: ``sup |d eps_j / dz|`` and ``sup |eps_j|`` (max over j)."""
        a = np.abs(self.model.poly)
        r = np.arange(1, self.model.R + 1)[:, None]
        lip = np.sum(r * a * k ** (r - 1), axis=0).max()
        kmax = np.sum(a * k**r, axis=0).max()
        return float(lip), float(kmax)

    def hypotheses(self, k: float) -> dict:
        ev = np.abs(np.linalg.eigvals(self.model.A))
        grid = np.linspace(-k, k, SCAN_POINTS)
        eps = self.model.epsilon(grid)
        monotone = [monotone_scan(eps[:, j]) for j in range(self.N)]
        return {
            "min_abs_eigenvalue": float(ev.min()),
            "spectral_radius": float(ev.max()),
            "inf_norm": self.model.inf_norm,
            "no_zero_eigenvalues": bool(ev.min() > 0),
            "input_map_monotone_component": bool(any(monotone)),
            "scan_bound": float(k),
        }


class TdrSystem:
    """Exact time-delay reservoir, started at its fixed point."""

    kind = "tdr"

    def __init__(self, params: TdrParams, R: int = 8):
        self.params = params
        self.R = R
        self._fp = solve_fixed_point(params.kernel, params.theta)

    @property
    def N(self) -> int:
        return self.params.N

    def run(self, z) -> np.ndarray:
        return tdr_run(np.asarray(z, dtype=float), self.params, np.full(self.N, self._fp.x0)).states

    def run_final_batch(self, Z: np.ndarray) -> np.ndarray:
        return np.stack([self.run(row)[-1] for row in Z])

    def hypotheses(self, k: float) -> dict:
        p = self.params
        bound = float(np.max(np.abs(p.mask)) * k)
        grid = np.linspace(-bound, bound, SCAN_POINTS)
        poly = np.zeros_like(grid)
        for r in range(1, self.R + 1):
            b_r = float(p.kernel.dI(r, self._fp.x0, 0.0, p.theta)) / math.factorial(r)
            poly += b_r * grid**r
        return {
            "fixed_point": self._fp.x0,
            "abs_slope": abs(self._fp.slope),
            "slope_below_one": bool(abs(self._fp.slope) < 1),
            "taylor_input_map_monotone": monotone_scan(poly),
            "taylor_order": self.R,
            "scan_bound": bound,
        }


def as_system(obj):
    if isinstance(obj, ReservoirModel):
        return ModelSystem(obj)
    if isinstance(obj, TdrParams):
        return TdrSystem(obj)
    if hasattr(obj, "run") and hasattr(obj, "hypotheses"):
        return obj
    raise TypeError(f"cannot check properties of {type(obj).__name__}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


@dataclass(frozen=True)
class SeparationReport:
    system: str
    s: int
    delta: float
    horizon: int
    min_gap_per_t: np.ndarray  # gap at t = s, ..., s + horizon
    gap_floor: float
    passed: bool
    hypotheses: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def check_separation(system, probe: SpProbe, gap_floor: float = GAP_FLOOR) -> SeparationReport:
    """Perturb the input at ``s`` and track ``||x(t) - x'(t)||`` over the horizon.

    PASS iff every gap exceeds ``gap_floor * max(1, max |x|)``.
    """
    system = as_system(system)
    z = np.array(probe.base_input.values, dtype=float)
    zp = z.copy()
    zp[probe.s] += probe.delta
    stop = probe.s + probe.horizon + 1
    X = system.run(z[:stop])
    Xp = system.run(zp[:stop])
    gaps = np.max(np.abs(X[probe.s :] - Xp[probe.s :]), axis=1)
    floor = gap_floor * max(1.0, float(np.max(np.abs(X))))
    k = float(max(np.max(np.abs(z)), np.max(np.abs(zp))))
    return SeparationReport(
        system=system.kind,
        s=probe.s,
        delta=probe.delta,
        horizon=probe.horizon,
        min_gap_per_t=gaps,
        gap_floor=floor,
        passed=bool(np.all(gaps > floor)),
        hypotheses=system.hypotheses(k * (1 + 1e-12)),
    )


def ufmp_bound(model: ReservoirModel, k: float, delta_eps: float, h_eps: int) -> dict:
    """Analytic fading-memory bound ``(eps1 + (2 Kmax - eps1) ||A||^{h+1}) / (1 - ||A||)``.

    ``eps1`` is the Lipschitz bound of the input polynomial on ``[-k, k]``
    times ``delta_eps``; ``Kmax`` bounds ``||eps(z)||`` there.
    """
    norm = model.inf_norm
    if not norm < 1:
        raise HypothesisViolated(f"||A||_inf = {norm:.6g} >= 1")
    lip, kmax = ModelSystem(model).lipschitz_and_kmax(k)
    eps1 = lip * delta_eps
    bound = (eps1 + (2 * kmax - eps1) * norm ** (h_eps + 1)) / (1 - norm)
    return {"inf_norm": norm, "eps1": eps1, "k_max": kmax, "lipschitz": lip, "bound": bound}


@dataclass(frozen=True)
class FadingMemoryReport:
    system: str
    epsilon: float
    delta_eps: float
    h_eps: int
    trials: int
    history: int
    input_law: dict
    max_final_gap: float
    mean_final_gap: float
    passed: bool
    analytic: dict | None
    bound_holds: bool | None
    hypotheses: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)


def _ufmp_inputs(law: InputLaw, probe: UfmProbe, history: int, seed: int):
    """Input pairs agreeing within ``delta_eps`` on the last ``h_eps + 1`` steps.

    Draws do not depend on ``h_eps`` so that reports are nested across
    agreement windows for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    T = history
    shape = (probe.trials, T)
    z = law.sample(rng, shape)
    alt = law.sample(rng, shape)
    u = rng.uniform(-1.0, 1.0, size=shape) * (1 - 1e-12)
    k = law.bound * (1 - 1e-12)
    near = np.clip(z + probe.delta_eps * u, -k, k)
    agree = np.arange(T) >= T - 1 - probe.h_eps
    zp = np.where(agree, near, alt)
    return z, zp


def check_fading_memory(
    system, probe: UfmProbe, input_law: InputLaw = InputLaw(), seed: int = 0, history: int = 200
) -> FadingMemoryReport:
    """Monte Carlo search for input pairs that violate the fading-memory target.

    For the model the appendix bound is evaluated as well and must dominate
    every observed gap. For the exact reservoir the check is exploratory.
    """
    system = as_system(system)
    if history < probe.h_eps + 1:
        raise ValueError("history must cover the agreement window")
    analytic = None
    if system.kind == "model":
        analytic = ufmp_bound(system.model, input_law.bound, probe.delta_eps, probe.h_eps)
    z, zp = _ufmp_inputs(input_law, probe, history, seed)
    gaps = np.max(np.abs(system.run_final_batch(z) - system.run_final_batch(zp)), axis=1)
    max_gap = float(gaps.max())
    return FadingMemoryReport(
        system=system.kind,
        epsilon=probe.epsilon,
        delta_eps=probe.delta_eps,
        h_eps=probe.h_eps,
        trials=probe.trials,
        history=history,
        input_law=asdict(input_law),
        max_final_gap=max_gap,
        mean_final_gap=float(gaps.mean()),
        passed=max_gap <= probe.epsilon,
        analytic=analytic,
        bound_holds=None if analytic is None else bool(max_gap <= analytic["bound"]),
        hypotheses=system.hypotheses(input_law.bound),
    )
