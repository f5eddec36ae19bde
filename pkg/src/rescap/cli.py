"""Command-line front end: ``rescap <command> --config cfg.json --out dir``.

Every command validates a versioned JSON config (unknown keys are errors),
writes the resolved config next to its outputs and produces byte-identical
files when replayed with the same config and seed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines, capacity_model as cm, generators as gen, properties as props, tdr
from .errors import ConfigError, RescapError
from .series_core import (
    AutomomentProvider,
    GaussianAutomoments,
    TimeSeries,
    estimate_automoments,
    estimate_comoments,
)

log = logging.getLogger("rescap")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# benchmark column name -> Kalman/teaching transform of the log-variance b(t)
TARGETS = {
    "volatility": "exp_half",
    "variance": "exp",
    "log_variance": "identity",
    "log_volatility": "log_half",
}
SURFACE_AXES = ("eta", "gamma", "phi", "d", "lam")
SURFACE_MODES = ("empirical_tdr", "closed_form_model")


# -- configuration ------------------------------------------------------------------


def _strict(cls, data, path: str):
    """Build a config dataclass, rejecting unknown keys with the offending path."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class GeneratorConfig:
    kind: str = "arsv"
    params: dict = field(default_factory=dict)
    input_scale: float = 1.0

    def __post_init__(self):
        _require(self.kind in ("arsv", "arma", "garch", "gaussian_iid"), f"kind: unknown generator {self.kind!r}")
        _require(self.input_scale > 0, "input_scale: must be positive")
        self.model()  # validates params

    def model(self):
        p = dict(self.params)
        try:
            if self.kind == "arsv":
                base = asdict(gen.REFERENCE_ARSV)
                unknown = sorted(set(p) - set(base))
                _require(not unknown, f"params: unknown key(s) {unknown}")
                return gen.ArsvModel(**{**base, **p})
            if self.kind == "arma":
                unknown = sorted(set(p) - {"phi", "theta", "sigma2"})
                _require(not unknown, f"params: unknown key(s) {unknown}")
                return gen.ArmaModel(
                    tuple(p.get("phi", ())), tuple(p.get("theta", ())), float(p.get("sigma2", 1.0))
                )
            if self.kind == "garch":
                unknown = sorted(set(p) - {"alpha0", "alpha1", "beta"})
                _require(not unknown, f"params: unknown key(s) {unknown}")
                return gen.GarchModel(**p)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"params: {exc}") from None
        _require(not p, "params: gaussian_iid takes no parameters")
        return None


@dataclass
class TdrConfig:
    N: int = 40
    d: float = tdr.REFERENCE_D
    kernel: str = "ikeda"
    theta: list = field(default_factory=lambda: list(tdr.REFERENCE_IKEDA_THETA))
    mask_seed: int | None = None
    mask: list | None = None

    def __post_init__(self):
        _require(self.kernel == "ikeda", f"kernel: only 'ikeda' is configurable, got {self.kernel!r}")
        _require(isinstance(self.N, int) and self.N >= 1, "N: must be a positive integer")
        _require(len(self.theta) == 3, "theta: expected [eta, gamma, phi]")
        _require(self.mask is None or len(self.mask) == self.N, "mask: length must equal N")
        _require(math.isfinite(self.d) and self.d > 0, "d: must be positive and finite")
        _require(all(math.isfinite(v) for v in self.theta), "theta: entries must be finite")
        _require(self.mask is None or all(math.isfinite(v) for v in self.mask), "mask: entries must be finite")

    def params(self, seed: int, **changes) -> tdr.TdrParams:
        mask = np.asarray(self.mask, dtype=float) if self.mask is not None else None
        if mask is None:
            mask = tdr.random_mask(self.N, self.mask_seed if self.mask_seed is not None else seed)
        theta = list(self.theta)
        for i, name in enumerate(("eta", "gamma", "phi")):
            if name in changes:
                theta[i] = changes.pop(name)
        d = changes.pop("d", self.d)
        return tdr.TdrParams(self.N, float(d), tdr.IkedaKernel(), tuple(float(v) for v in theta), mask)


@dataclass
class ModelConfig:
    R: int = 8
    moments: str = "empirical"
    strict_printed: bool = False

    def __post_init__(self):
        _require(isinstance(self.R, int) and self.R >= 1, "R: must be a positive integer")
        _require(self.moments in ("empirical", "gaussian"), f"moments: unknown source {self.moments!r}")


@dataclass
class ReadoutSection:
    lam: float = 1e-8
    washout: int = 200
    lambda_grid: list = field(default_factory=list)

    def __post_init__(self):
        _require(self.lam >= 0, "lam: must be >= 0")
        _require(self.washout >= 0, "washout: must be >= 0")
        _require(all(v >= 0 for v in self.lambda_grid), "lambda_grid: entries must be >= 0")


@dataclass
class TaskConfig:
    kind: str = "filter"
    target: str = "volatility"
    L: list | None = None
    Q: list | None = None
    f: int = 0
    h: int = 0
    w: list | None = None

    def __post_init__(self):
        kinds = ("filter", "linear", "quadratic", "arma_forecast", "garch_forecast")
        _require(self.kind in kinds, f"kind: unknown task {self.kind!r}; expected one of {list(kinds)}")
        _require(self.f >= 0 and self.h >= 0, "f, h: must be >= 0")
        if self.kind == "filter":
            _require(self.target in TARGETS, f"target: expected one of {sorted(TARGETS)}")
        if self.kind == "linear":
            _require(self.L is not None and len(self.L) == self.f + self.h + 1, "L: needs f+h+1 entries")
        if self.kind == "quadratic":
            m = self.f + self.h + 1
            _require(self.Q is not None and np.shape(self.Q) == (m, m), "Q: needs shape (f+h+1, f+h+1)")
        if self.kind == "arma_forecast":
            _require(self.w is not None and len(self.w) >= 1, "w: needs at least one weight")
        if self.kind == "garch_forecast":
            _require(self.f >= 1, "f: must be >= 1 for garch_forecast")

    def as_linear_or_quadratic(self):
        """``("linear", L, f, h)`` or ``("quadratic", Q, f, h)`` for the forecasting kinds."""
        if self.kind == "linear":
            return "linear", np.asarray(self.L, float), self.f, self.h
        if self.kind == "arma_forecast":
            w = np.asarray(self.w, float)
            return "linear", np.append(w, 0.0), w.size, 0
        if self.kind == "quadratic":
            return "quadratic", np.asarray(self.Q, float), self.f, self.h
        if self.kind == "garch_forecast":
            Q = np.zeros((self.f + 1, self.f + 1))
            Q[: self.f, : self.f] = gen.garch_quadratic_task(self.f)
            return "quadratic", Q, self.f, 0
        raise ValueError("filter tasks have no window form")


@dataclass
class SampleConfig:
    train: int = 100_000
    test: int = 10_000
    moments: int = 0  # 0: estimate moments on the training segment

    def __post_init__(self):
        _require(self.train >= 100, "train: must be >= 100")
        _require(self.test >= 0 and self.moments >= 0, "test, moments: must be >= 0")


@dataclass
class TruncationConfig:
    tol: float = 1e-10
    k_max: int = 2000
    h_max: int = 50

    def __post_init__(self):
        try:
            cm.TruncationPolicy(self.tol, self.k_max, self.h_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def policy(self) -> cm.TruncationPolicy:
        return cm.TruncationPolicy(self.tol, self.k_max, self.h_max)


@dataclass
class AxisConfig:
    name: str
    min: float
    max: float
    steps: int

    def __post_init__(self):
        _require(self.name in SURFACE_AXES, f"name: unknown axis {self.name!r}; expected one of {list(SURFACE_AXES)}")
        _require(isinstance(self.steps, int) and self.steps >= 2, "steps: must be an integer >= 2")

    def values(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.steps)


@dataclass
class SurfaceConfig:
    axes: list = field(default_factory=list)
    mode: str = "both"
    nmse_on: str = "train"

    def __post_init__(self):
        _require(1 <= len(self.axes) <= 2 or not self.axes, "axes: one or two axes")
        self.axes = [a if isinstance(a, AxisConfig) else _strict(AxisConfig, a, f"axes[{i}]") for i, a in enumerate(self.axes)]
        _require(self.mode in (*SURFACE_MODES, "both"), f"mode: unknown mode {self.mode!r}")
        _require(self.nmse_on in ("train", "test"), "nmse_on: expected 'train' or 'test'")

    def modes(self) -> tuple:
        return SURFACE_MODES if self.mode == "both" else (self.mode,)


@dataclass
class BenchmarkConfig:
    replicates: int = 1
    kalman: str = "filtered"

    def __post_init__(self):
        _require(self.replicates >= 1, "replicates: must be >= 1")
        _require(self.kalman in ("filtered", "predicted"), "kalman: expected 'filtered' or 'predicted'")


@dataclass
class PropertiesConfig:
    system: str = "model"
    input_length: int = 1000
    s: int = 500
    delta: float = 0.01
    horizon: int = 200
    epsilon: float = 1.0
    delta_eps: float = 0.01
    h_eps: int = 10
    trials: int = 1000
    history: int = 200
    law: str = "uniform"
    bound: float = 1.0
    law_scale: float = 1.0

    def __post_init__(self):
        _require(self.system in ("model", "tdr"), f"system: expected 'model' or 'tdr', got {self.system!r}")
        try:
            props.UfmProbe(self.epsilon, self.delta_eps, self.h_eps, self.trials)
            props.InputLaw(self.law, self.bound, self.law_scale)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_SECTIONS = {
    "generator": GeneratorConfig,
    "tdr": TdrConfig,
    "model": ModelConfig,
    "readout": ReadoutSection,
    "task": TaskConfig,
    "samples": SampleConfig,
    "truncation": TruncationConfig,
    "surface": SurfaceConfig,
    "benchmark": BenchmarkConfig,
    "properties": PropertiesConfig,
}


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    tdr: TdrConfig = field(default_factory=TdrConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    readout: ReadoutSection = field(default_factory=ReadoutSection)
    task: TaskConfig = field(default_factory=TaskConfig)
    samples: SampleConfig = field(default_factory=SampleConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    surface: SurfaceConfig = field(default_factory=SurfaceConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    properties: PropertiesConfig = field(default_factory=PropertiesConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"config: unknown key(s) {unknown}")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: unsupported version {version!r}, expected {SCHEMA_VERSION}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        sections = {name: _strict(kind, data.get(name), name) for name, kind in _SECTIONS.items()}
        cfg = cls(schema_version=version, seed=seed, **sections)
        if cfg.task.kind == "filter" and cfg.generator.kind != "arsv":
            raise ConfigError("task.kind: 'filter' targets need the arsv generator")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


# -- shared data preparation ------------------------------------------------------------


@dataclass
class Dataset:
    """Input fed to the reservoir and the teaching signal, on a common clock."""

    z: TimeSeries
    y: TimeSeries
    extra: dict = field(default_factory=dict)


def _simulate_input(cfg: ExperimentConfig, length: int, seed: int):
    g = cfg.generator
    model = g.model()
    extra = {}
    if g.kind == "arsv":
        z, sigma, b = gen.arsv_simulate(model, length, seed)
        extra = {"sigma": sigma, "b": b, "z_raw": z}
    elif g.kind == "arma":
        z, _ = gen.arma_simulate(model, length, seed)
    elif g.kind == "garch":
        z, s2 = gen.garch_simulate(model, length, seed)
        extra = {"sigma2": s2}
    else:
        z = TimeSeries(np.random.default_rng(seed).standard_normal(length))
    return TimeSeries(np.asarray(z) * g.input_scale), extra


def _teaching(cfg: ExperimentConfig, z: TimeSeries, extra: dict, target: str | None = None) -> TimeSeries:
    t = cfg.task
    if t.kind == "filter":
        b = np.asarray(extra["b"])
        return TimeSeries(baselines.TRANSFORMS[TARGETS[target or t.target]](b), z.origin_index)
    kind, M, f, h = t.as_linear_or_quadratic()
    if kind == "linear":
        return gen.linear_task_target(z, M, f, h)
    return gen.quadratic_task_target(z, M, f, h)


def make_dataset(cfg: ExperimentConfig, seed: int, length: int, target: str | None = None) -> Dataset:
    z, extra = _simulate_input(cfg, length, seed)
    return Dataset(z, _teaching(cfg, z, extra, target), extra)


def _moment_order(cfg: ExperimentConfig) -> tuple[int, int]:
    R, t = cfg.model.R, cfg.task
    m = 0 if t.kind == "filter" else t.as_linear_or_quadratic()[2] + t.as_linear_or_quadratic()[3] + 1
    return max(2 * R, R + 2, 4), cfg.truncation.h_max + m + 1


def moment_provider(cfg: ExperimentConfig, z: TimeSeries) -> AutomomentProvider:
    order, lag = _moment_order(cfg)
    if cfg.model.moments == "empirical":
        return estimate_automoments(z, order, lag)
    s2 = cfg.generator.input_scale**2
    if cfg.generator.kind == "arma":
        acvf = gen.arma_autocovariance(cfg.generator.model(), 4 * lag) * s2
        return GaussianAutomoments(0.0, lambda h: float(acvf[abs(h)]) if abs(h) < acvf.size else 0.0)
    if cfg.generator.kind == "gaussian_iid":
        return GaussianAutomoments(0.0, lambda h: s2 if h == 0 else 0.0)
    raise ConfigError("model.moments: 'gaussian' needs a Gaussian generator (arma or gaussian_iid)")


def model_task(cfg: ExperimentConfig, z: TimeSeries, y: TimeSeries):
    t = cfg.task
    if t.kind == "filter":
        com = estimate_comoments(y, z, cfg.model.R, (-cfg.truncation.h_max, 0))
        yv = np.asarray(y)
        return cm.FilterTask(com, float(yv.var()), float(yv.mean()))
    kind, M, f, h = t.as_linear_or_quadratic()
    return cm.LinearTask(M, f, h) if kind == "linear" else cm.QuadraticTask(M, f, h)


# -- output helpers -------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _persist_config(cfg: ExperimentConfig, out: Path) -> None:
    write_json(out / "config.resolved.json", cfg.to_dict())


# -- commands -------------------------------------------------------------------------------


def _fit_and_score(cfg, params, data: Dataset, lam: float):
    """Train on the first ``washout + train`` samples; NMSE on both segments."""
    n_train = cfg.readout.washout + cfg.samples.train
    states = tdr.tdr_run(data.z, params)
    X_tr, X_te = states.window(0, n_train), states.window(n_train, len(states))
    ro = tdr.train_readout(X_tr, data.y, tdr.ReadoutConfig(lam, cfg.readout.washout))
    train = tdr.evaluate_nmse(X_tr, ro, data.y, cfg.readout.washout)
    test = tdr.evaluate_nmse(X_te, ro, data.y) if cfg.samples.test > 0 else float("nan")
    return ro, train, test, states


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    n_train = cfg.readout.washout + cfg.samples.train
    data = make_dataset(cfg, cfg.seed, n_train + cfg.samples.test)
    params = cfg.tdr.params(cfg.seed)
    ro, train, test, _ = _fit_and_score(cfg, params, data, cfg.readout.lam)
    result = {
        "task": asdict(cfg.task),
        "lambda": cfg.readout.lam,
        "nmse_train": train,
        "nmse_test": test,
        "capacity_train": tdr.capacity_from_nmse(train),
        "capacity_test": tdr.capacity_from_nmse(test) if math.isfinite(test) else None,
        "mask": params.mask,
        "mask_seed": cfg.tdr.mask_seed if cfg.tdr.mask_seed is not None else cfg.seed,
        "files": {"readout": "readout.json", "input": "input.csv", "teaching": "teaching.csv"},
    }
    if cfg.readout.lambda_grid:
        sweep = []
        for lam in cfg.readout.lambda_grid:
            _, tr, te, _ = _fit_and_score(cfg, params, data, float(lam))
            sweep.append({"lambda": float(lam), "nmse_train": tr, "nmse_test": te})
        result["lambda_sweep"] = sweep
    (out / "readout.json").write_text(
        tdr.Readout(ro.W, ro.a, ro.lam, result["mask_seed"]).to_json() + "\n"
    )
    data.z.to_csv(out / "input.csv")
    data.y.to_csv(out / "teaching.csv")
    write_json(out / "simulate.json", result)
    return result


def _capacity_for(cfg: ExperimentConfig, params, moments, task, lam: float) -> cm.CapacityReport:
    model = cm.ReservoirModel.from_tdr(params, cfg.model.R)
    return cm.task_capacity(model, moments, task, lam, cfg.truncation.policy(), cfg.model.strict_printed)


def cmd_capacity(cfg: ExperimentConfig, out: Path) -> dict:
    n = cfg.samples.moments or (cfg.readout.washout + cfg.samples.train)
    data = make_dataset(cfg, cfg.seed, n)
    moments = moment_provider(cfg, data.z)
    task = model_task(cfg, data.z, data.y)
    rep = _capacity_for(cfg, cfg.tdr.params(cfg.seed), moments, task, cfg.readout.lam)
    result = rep.to_dict()
    result["moment_source"] = cfg.model.moments
    result["R"] = cfg.model.R
    write_json(out / "capacity.json", result)
    return result


# surface workers keep the shared sample in a module global set once per process
_SURFACE_CTX: dict = {}


def _surface_init(ctx: dict) -> None:
    _SURFACE_CTX.clear()
    _SURFACE_CTX.update(ctx)


def _surface_cell(job):
    i, j, changes = job
    ctx = _SURFACE_CTX
    cfg: ExperimentConfig = ctx["cfg"]
    changes = dict(changes)
    lam = float(changes.pop("lam", cfg.readout.lam))
    out = {}
    try:
        params = cfg.tdr.params(cfg.seed, **changes)
    except (ValueError, RescapError) as exc:
        return i, j, {m: (float("nan"), f"{type(exc).__name__}: {exc}") for m in ctx["modes"]}
    for mode in ctx["modes"]:
        try:
            if mode == "empirical_tdr":
                _, tr, te, _ = _fit_and_score(cfg, params, ctx["data"], lam)
                value = tr if cfg.surface.nmse_on == "train" else te
            else:
                value = 1.0 - _capacity_for(cfg, params, ctx["moments"], ctx["task"], lam).capacity
            out[mode] = (float(value), "")
        except (RescapError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            out[mode] = (float("nan"), f"{type(exc).__name__}: {exc}")
    return i, j, out


def _argmin(values: np.ndarray):
    if np.all(np.isnan(values)):
        return None
    return [int(v) for v in np.unravel_index(np.nanargmin(values), values.shape)]


def cmd_surface(cfg: ExperimentConfig, out: Path, workers: int) -> dict:
    axes = cfg.surface.axes
    if not axes:
        raise ConfigError("surface.axes: at least one axis is required")
    modes = cfg.surface.modes()
    n_train = cfg.readout.washout + cfg.samples.train
    data = make_dataset(cfg, cfg.seed, n_train + cfg.samples.test)
    ctx = {"cfg": cfg, "modes": modes, "data": data}
    if "closed_form_model" in modes:
        if cfg.samples.moments:
            msample = make_dataset(cfg, cfg.seed, cfg.samples.moments)
            z_m, y_m = msample.z, msample.y
        else:
            z_m, y_m = data.z.window(0, n_train), _window_like(data.y, data.z, n_train)
        ctx["moments"] = moment_provider(cfg, z_m)
        ctx["task"] = model_task(cfg, z_m, y_m)
        if cfg.model.moments == "empirical":
            # populate lazily computed entries once, before the sample is shipped to workers
            ctx["moments"].mu((1,))
    v1 = axes[0].values()
    v2 = axes[1].values() if len(axes) > 1 else np.array([np.nan])
    jobs = []
    for i, a in enumerate(v1):
        for j, b in enumerate(v2):
            changes = {axes[0].name: float(a)}
            if len(axes) > 1:
                changes[axes[1].name] = float(b)
            jobs.append((i, j, tuple(sorted(changes.items()))))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_surface_init, initargs=(ctx,)) as ex:
            results = list(ex.map(_surface_cell, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        _surface_init(ctx)
        results = [_surface_cell(job) for job in jobs]
    grid = {m: np.full((v1.size, v2.size), np.nan) for m in modes}
    failures = []
    for i, j, res in sorted(results, key=lambda r: (r[0], r[1])):
        for m, (value, reason) in res.items():
            grid[m][i, j] = value
            if reason:
                failures.append({"i": i, "j": j, "mode": m, "reason": reason})
    rows = []
    for i, a in enumerate(v1):
        for j, b in enumerate(v2):
            for m in modes:
                rows.append((float(a), "" if len(axes) == 1 else float(b), m, grid[m][i, j]))
    write_csv(out / "surface.csv", ["axis1", "axis2", "mode", "value"], rows)
    summary = {
        "axes": [asdict(a) for a in axes],
        "cells": int(v1.size * v2.size),
        "failures": failures,
        "argmin": {},
    }
    for m in modes:
        idx = _argmin(grid[m])
        summary["argmin"][m] = None if idx is None else {
            "index": idx,
            "values": [float(v1[idx[0]])] + ([float(v2[idx[1]])] if len(axes) > 1 else []),
            "value": float(grid[m][tuple(idx)]),
        }
    if len(modes) == 2 and all(summary["argmin"][m] for m in modes):
        a, b = (summary["argmin"][m]["index"] for m in modes)
        summary["argmin_chebyshev_distance"] = max(abs(a[0] - b[0]), abs(a[1] - b[1]))
    write_json(out / "surface_summary.json", summary)
    return summary


def _window_like(y: TimeSeries, z: TimeSeries, n: int) -> TimeSeries:
    """Teaching values whose time labels fall in the first ``n`` input samples."""
    lo, hi = z.origin_index, z.origin_index + n
    start = max(lo - y.origin_index, 0)
    stop = max(min(hi - y.origin_index, len(y)), start)
    return y.window(start, stop)


TABLE_METHODS = ("reservoir_computer", "reservoir_model", "kalman_filter")


def _benchmark_one(cfg: ExperimentConfig, seed: int) -> dict:
    model = cfg.generator.model()
    washout, n_train = cfg.readout.washout, cfg.readout.washout + cfg.samples.train
    z, extra = _simulate_input(cfg, n_train + cfg.samples.test, seed)
    b = np.asarray(extra["b"])
    params = cfg.tdr.params(seed)
    states = tdr.tdr_run(z, params)
    X_tr, X_te = states.window(0, n_train), states.window(n_train, len(states))
    z_tr = z.window(0, n_train)
    moments = estimate_automoments(z_tr, 2 * cfg.model.R, cfg.truncation.h_max)
    rmodel = cm.ReservoirModel.from_tdr(params, cfg.model.R)
    kal = baselines.arsv_kalman_filter(extra["z_raw"], model)
    kal_b = kal.b_hat if cfg.benchmark.kalman == "filtered" else kal.b_pred
    row = {m: {} for m in TABLE_METHODS}
    row["kalman_other"] = {}
    other = kal.b_pred if cfg.benchmark.kalman == "filtered" else kal.b_hat
    for col, tr in TARGETS.items():
        y = TimeSeries(baselines.TRANSFORMS[tr](b), z.origin_index)
        ro = tdr.train_readout(X_tr, y, tdr.ReadoutConfig(cfg.readout.lam, washout))
        row["reservoir_computer"][col] = tdr.evaluate_nmse(X_te, ro, y)
        y_tr = y.window(0, n_train)
        com = estimate_comoments(y_tr, z_tr, cfg.model.R, (-cfg.truncation.h_max, 0))
        yv = np.asarray(y_tr)
        task = cm.FilterTask(com, float(yv.var()), float(yv.mean()))
        rep = cm.task_capacity(rmodel, moments, task, cfg.readout.lam, cfg.truncation.policy(), cfg.model.strict_printed)
        row["reservoir_model"][col] = rep.nmse
        truth = np.asarray(y)[n_train:]
        row["kalman_filter"][col] = baselines.kalman_volatility_nmse(np.asarray(kal_b)[n_train:], truth, tr)
        row["kalman_other"][col] = baselines.kalman_volatility_nmse(np.asarray(other)[n_train:], truth, tr)
    return row


def cmd_benchmark(cfg: ExperimentConfig, out: Path, workers: int) -> dict:
    if cfg.generator.kind != "arsv":
        raise ConfigError("generator.kind: benchmark needs the arsv generator")
    seeds = [cfg.seed + k for k in range(cfg.benchmark.replicates)]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as ex:
            runs = list(ex.map(_benchmark_one, [cfg] * len(seeds), seeds))
    else:
        runs = [_benchmark_one(cfg, s) for s in seeds]
    cols = list(TARGETS)
    other = "kalman_predicted" if cfg.benchmark.kalman == "filtered" else "kalman_filtered"
    names = {**{m: m for m in TABLE_METHODS}, "kalman_other": other}
    rows = [
        (seed, names[m], *[run[m][c] for c in cols]) for seed, run in zip(seeds, runs) for m in names
    ]
    write_csv(out / "benchmark_runs.csv", ["seed", "method", *cols], rows)
    median = {names[m]: {c: float(np.median([run[m][c] for run in runs])) for c in cols} for m in names}
    write_csv(out / "summary.csv", ["method", *cols], [(m, *[median[m][c] for c in cols]) for m in median])
    result = {"seeds": seeds, "median": median, "kalman_estimate": cfg.benchmark.kalman}
    write_json(out / "benchmark.json", result)
    return result


def cmd_check_properties(cfg: ExperimentConfig, out: Path) -> dict:
    pc = cfg.properties
    params = cfg.tdr.params(cfg.seed)
    system = (
        props.ModelSystem(cm.ReservoirModel.from_tdr(params, cfg.model.R))
        if pc.system == "model"
        else props.TdrSystem(params, cfg.model.R)
    )
    law = props.InputLaw(pc.law, pc.bound, pc.law_scale)
    z = law.sample(np.random.default_rng(cfg.seed), pc.input_length)
    try:
        sp = props.check_separation(system, props.SpProbe(TimeSeries(z), pc.s, pc.delta, pc.horizon))
    except ValueError as exc:
        raise ConfigError(f"properties: {exc}") from None
    ufm = props.check_fading_memory(
        system, props.UfmProbe(pc.epsilon, pc.delta_eps, pc.h_eps, pc.trials), law, cfg.seed, pc.history
    )
    (out / "separation.json").write_text(sp.to_json() + "\n")
    (out / "fading_memory.json").write_text(ufm.to_json() + "\n")
    result = {"separation_pass": sp.passed, "fading_memory_pass": ufm.passed, "ufmp_bound_holds": ufm.bound_holds}
    write_json(out / "properties.json", result)
    return result


COMMANDS = ("simulate", "capacity", "surface", "benchmark", "check-properties")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rescap", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    return ap


def run(command: str, cfg: ExperimentConfig, out: Path, workers: int) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    _persist_config(cfg, out)
    if command == "simulate":
        return cmd_simulate(cfg, out)
    if command == "capacity":
        return cmd_capacity(cfg, out)
    if command == "surface":
        return cmd_surface(cfg, out, workers)
    if command == "benchmark":
        return cmd_benchmark(cfg, out, workers)
    return cmd_check_properties(cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            cfg.seed = args.seed
        workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
        if workers < 1:
            raise ConfigError("--workers: must be >= 1")
        run(args.command, cfg, Path(args.out), workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RescapError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
