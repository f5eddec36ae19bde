"""Scalar time series and their higher order moments.

Automoments are written ``mu_z^{r1,...,rk}(h2,...,hk) = E[z(t)^r1 z(t+h2)^r2 ...]``
and are keyed by :class:`MomentSpec`. Two providers implement the same
``moment(spec)`` interface:

* :class:`AutomomentTable` -- sample averages over a realization,
* :class:`GaussianAutomoments` -- exact moments of a Gaussian process
  (pair-partition expansion), plus :class:`IidAutomoments` for IID inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientData, MissingMoment, OrderTooHigh

__all__ = [
    "TimeSeries",
    "MomentSpec",
    "AutomomentProvider",
    "AutomomentTable",
    "ComomentTable",
    "GaussianAutomoments",
    "IidAutomoments",
    "canonicalize_moment_spec",
    "estimate_automoments",
    "estimate_comoments",
    "gaussian_automoment",
    "mean_with_se",
    "MIN_OVERLAP",
    "MAX_GAUSSIAN_ORDER",
]

MIN_OVERLAP = 30
MAX_GAUSSIAN_ORDER = 8


@dataclass(frozen=True)
class TimeSeries:
    """Finite realization of a scalar process.

    ``origin_index`` is the integer time label of ``values[0]``.
    """

    values: np.ndarray
    origin_index: int = 0

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if arr.size < 1:
            raise ValueError("a time series needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("time series values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "origin_index", int(self.origin_index))

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.origin_index, self.origin_index + len(self))

    def window(self, start: int, stop: int) -> "TimeSeries":
        """Slice by position, keeping time labels consistent."""
        return TimeSeries(self.values[start:stop], self.origin_index + start)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("value\n")
            for v in self.values:
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path, origin_index: int = 0) -> "TimeSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["value"]:
                raise ValueError(f"{path}: expected a single 'value' column, got {header}")
            vals = [float(row[0]) for row in reader if row]
        return cls(np.asarray(vals), origin_index)


@dataclass(frozen=True)
class MomentSpec:
    """Powers ``(r1, ..., rk)`` at lags ``(h2, ..., hk)`` relative to ``t``."""

    powers: tuple
    lags: tuple = ()

    def __post_init__(self):
        powers = tuple(int(p) for p in self.powers)
        lags = tuple(int(h) for h in self.lags)
        if not powers:
            raise ValueError("a moment spec needs at least one power")
        if any(p < 1 for p in powers):
            raise ValueError(f"powers must be positive integers, got {powers}")
        if len(lags) != len(powers) - 1:
            raise ValueError("len(lags) must equal len(powers) - 1")
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "lags", lags)

    @property
    def order(self) -> int:
        return sum(self.powers)

    @property
    def times(self) -> tuple:
        return (0,) + self.lags

    def __str__(self) -> str:
        return f"mu^{self.powers}{self.lags}"


def canonicalize_moment_spec(spec: MomentSpec) -> MomentSpec:
    """Apply the two reduction rules: fold zero lags into ``r1`` and merge
    coincident lags, then sort the remaining lags ascending."""
    acc: dict[int, int] = {0: spec.powers[0]}
    for h, r in zip(spec.lags, spec.powers[1:]):
        acc[h] = acc.get(h, 0) + r
    rest = sorted(h for h in acc if h != 0)
    return MomentSpec((acc[0],) + tuple(acc[h] for h in rest), tuple(rest))


def _stationary_key(spec: MomentSpec) -> MomentSpec:
    # Time-shift so the earliest factor sits at lag 0 (strict stationarity).
    spec = canonicalize_moment_spec(spec)
    pairs = sorted(zip(spec.times, spec.powers))
    t0 = pairs[0][0]
    return MomentSpec(
        tuple(p for _, p in pairs), tuple(t - t0 for t, _ in pairs[1:])
    )


def _clusters(spec: MomentSpec, max_gap: int | None) -> list[MomentSpec]:
    """Split a stationary key into blocks separated by more than ``max_gap``."""
    key = _stationary_key(spec)
    if max_gap is None or not key.lags:
        return [key]
    times = key.times
    out, start = [], 0
    for i in range(1, len(times) + 1):
        if i == len(times) or times[i] - times[i - 1] > max_gap:
            ts, ps = times[start:i], key.powers[start:i]
            out.append(MomentSpec(ps, tuple(t - ts[0] for t in ts[1:])))
            start = i
    return out


class AutomomentProvider:
    """Common lookup logic for automoment sources.

    Beyond ``max_abs_lag`` the factors of a moment are treated as independent,
    so products factorize over blocks of times that are further apart than the
    lag horizon. Subclasses implement :meth:`_block_moment` on stationary keys.
    """

    max_abs_lag: int | None = None

    def moment(self, spec: MomentSpec) -> float:
        val = 1.0
        for block in _clusters(spec, self.max_abs_lag):
            val *= self._block_moment(block)
        return val

    def mu(self, powers: Sequence[int], lags: Sequence[int] = ()) -> float:
        return self.moment(MomentSpec(tuple(powers), tuple(lags)))

    def _block_moment(self, key: MomentSpec) -> float:  # pragma: no cover
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.mu((1,))


def _lagged_product_mean(z: np.ndarray, key: MomentSpec) -> tuple[float, int]:
    span = key.times[-1]
    count = z.size - span
    if count <= 0:
        raise InsufficientData(f"no overlap window for {key} with {z.size} samples")
    prod = np.ones(count)
    for t, p in zip(key.times, key.powers):
        seg = z[t : t + count]
        prod *= seg if p == 1 else seg**p
    return float(prod.mean()), count


class AutomomentTable(AutomomentProvider):
    """Sample automoments of one realization.

    The families needed by the capacity formulas (``mu^r`` and ``mu^{r,s}(h)``)
    are filled eagerly; higher-arity specs are estimated on first request from
    the retained sample and memoized. Lookups are reduced to a canonical,
    time-shifted key first, so equivalent specs always return the same value.
    """

    def __init__(
        self,
        entries: Mapping[MomentSpec, float],
        max_order: int,
        max_abs_lag: int,
        counts: Mapping[MomentSpec, int] | None = None,
        source: np.ndarray | None = None,
    ):
        self.entries = dict(entries)
        self.counts = dict(counts or {})
        self.max_order = int(max_order)
        self.max_abs_lag = int(max_abs_lag)
        self._source = None if source is None else np.asarray(source, dtype=float)
        for k, v in self.entries.items():
            if not math.isfinite(v):
                raise ValueError(f"non-finite moment {k}: {v}")

    def _block_moment(self, key: MomentSpec) -> float:
        hit = self.entries.get(key)
        if hit is not None:
            return hit
        if self._source is None:
            raise MissingMoment(f"{key} not in table and no sample retained")
        if key.order > self.max_order:
            raise MissingMoment(f"{key} exceeds table order {self.max_order}")
        val, count = _lagged_product_mean(self._source, key)
        self.entries[key] = val
        self.counts[key] = count
        return val

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("powers;lags;value;count\n")
            for key in sorted(self.entries, key=lambda k: (len(k.powers), k.powers, k.lags)):
                p = ",".join(map(str, key.powers))
                h = ",".join(map(str, key.lags))
                fh.write(f"{p};{h};{self.entries[key]!r};{self.counts.get(key, '')}\n")

    @classmethod
    def from_csv(cls, path, max_abs_lag: int | None = None) -> "AutomomentTable":
        entries, counts = {}, {}
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "powers;lags;value;count":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                if not line.strip():
                    continue
                p, h, v, c = line.rstrip("\n").split(";")
                key = MomentSpec(
                    tuple(int(x) for x in p.split(",")),
                    tuple(int(x) for x in h.split(",")) if h else (),
                )
                entries[key] = float(v)
                if c:
                    counts[key] = int(c)
        max_order = max((k.order for k in entries), default=0)
        if max_abs_lag is None:
            max_abs_lag = max((k.times[-1] for k in entries), default=0)
        return cls(entries, max_order, max_abs_lag, counts)


def estimate_automoments(
    series: TimeSeries | np.ndarray, max_order: int, max_abs_lag: int
) -> AutomomentTable:
    """Overlapping-window sample automoments.

    Populates ``mu^r`` for ``r <= max_order`` and ``mu^{r,s}(h)`` for
    ``0 < h <= max_abs_lag`` and ``r + s <= max_order``. Each value is the
    average over every position where all factors are observed. Other specs
    (third and fourth order products at several lags) are computed on demand.
    """
    z = np.asarray(series, dtype=float).reshape(-1)
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    if z.size <= max_abs_lag + MIN_OVERLAP:
        raise InsufficientData(
            f"series of length {z.size} too short for lag horizon {max_abs_lag}"
        )
    T = z.size
    pw = np.empty((T, max_order))
    pw[:, 0] = z
    for r in range(1, max_order):
        pw[:, r] = pw[:, r - 1] * z

    entries, counts = {}, {}
    means = pw.mean(axis=0)
    for r in range(1, max_order + 1):
        key = MomentSpec((r,))
        entries[key] = float(means[r - 1])
        counts[key] = T
    half = max_order - 1
    if half >= 1:
        for h in range(1, max_abs_lag + 1):
            n = T - h
            cross = pw[:n, :half].T @ pw[h:, :half] / n
            for r in range(1, half + 1):
                for s in range(1, max_order - r + 1):
                    key = MomentSpec((r, s), (h,))
                    entries[key] = float(cross[r - 1, s - 1])
                    counts[key] = n
    return AutomomentTable(entries, max_order, max_abs_lag, counts, source=z)


@dataclass(frozen=True)
class ComomentTable:
    """``mu_{y,z}^r(h) = E[y(t) z(t+h)^r]`` keyed by ``(r, h)``."""

    entries: Mapping
    max_order: int
    mean_y: float = float("nan")
    counts: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.entries.items():
            if k[0] < 1:
                raise ValueError(f"comoment order must be >= 1, got {k}")
            if not math.isfinite(v):
                raise ValueError(f"non-finite comoment {k}: {v}")

    def value(self, r: int, h: int) -> float:
        try:
            return self.entries[(int(r), int(h))]
        except KeyError:
            raise MissingMoment(f"comoment mu_yz^{r}({h}) not available") from None

    @property
    def lags(self) -> list[int]:
        return sorted({h for _, h in self.entries})

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("order;lag;value;count\n")
            for (r, h) in sorted(self.entries):
                fh.write(f"{r};{h};{self.entries[(r, h)]!r};{self.counts.get((r, h), '')}\n")


def estimate_comoments(
    teaching: TimeSeries | np.ndarray,
    input: TimeSeries | np.ndarray,
    max_order: int,
    lag_range: tuple[int, int],
) -> ComomentTable:
    """Sample averages of ``y(t) z(t+h)^r`` for ``lag_range[0] <= h <= lag_range[1]``.

    Both series must be aligned on the same time index.
    """
    y = np.asarray(teaching, dtype=float).reshape(-1)
    z = np.asarray(input, dtype=float).reshape(-1)
    if y.size != z.size:
        raise ValueError("teaching and input series must be aligned (same length)")
    lo, hi = int(lag_range[0]), int(lag_range[1])
    if lo > hi:
        raise ValueError("empty lag range")
    T = y.size
    pw = np.empty((T, max_order))
    pw[:, 0] = z
    for r in range(1, max_order):
        pw[:, r] = pw[:, r - 1] * z
    entries, counts = {}, {}
    for h in range(lo, hi + 1):
        n = T - abs(h)
        if n <= 0:
            raise InsufficientData(f"no overlap for comoment lag {h} with {T} samples")
        if h >= 0:
            vals = y[:n] @ pw[h:] / n
        else:
            vals = y[-h:] @ pw[:n] / n
        for r in range(1, max_order + 1):
            entries[(r, h)] = float(vals[r - 1])
            counts[(r, h)] = n
    return ComomentTable(entries, max_order, float(y.mean()), counts)


# -- Gaussian moments ---------------------------------------------------------


def _expand_times(spec: MomentSpec) -> tuple:
    out = []
    for t, p in zip(spec.times, spec.powers):
        out.extend([t] * p)
    return tuple(out)


def gaussian_automoment(
    mean: float, acvf: Callable[[int], float], spec: MomentSpec
) -> float:
    """Exact automoment of a stationary Gaussian process with the given mean
    and autocovariance function, for total order up to 8."""
    if spec.order > MAX_GAUSSIAN_ORDER:
        raise OrderTooHigh(
            f"Gaussian moments supported up to order {MAX_GAUSSIAN_ORDER}, got {spec.order}"
        )
    times = _expand_times(canonicalize_moment_spec(spec))
    pos_times = times

    def cov(dt: int) -> float:
        return float(acvf(int(dt)))

    @lru_cache(maxsize=None)
    def rec(rest: tuple) -> float:
        if not rest:
            return 1.0
        first, tail = rest[0], rest[1:]
        total = float(mean) * rec(tail) if mean != 0.0 else 0.0
        for k in range(len(tail)):
            c = cov(pos_times[tail[k]] - pos_times[first])
            if c != 0.0:
                total += c * rec(tail[:k] + tail[k + 1 :])
        return total

    return rec(tuple(range(len(times))))


class GaussianAutomoments(AutomomentProvider):
    """Analytic provider for a stationary Gaussian process."""

    def __init__(self, mean: float, acvf: Callable[[int], float]):
        self._mean = float(mean)
        self.acvf = acvf
        self._cache: dict[MomentSpec, float] = {}

    def _block_moment(self, key: MomentSpec) -> float:
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = gaussian_automoment(self._mean, self.acvf, key)
        return hit


class IidAutomoments(AutomomentProvider):
    """Provider for an IID sequence with raw moments ``raw[r-1] = E[z^r]``."""

    def __init__(self, raw: Iterable[float]):
        self.raw = tuple(float(v) for v in raw)
        self.max_abs_lag = 0

    def _block_moment(self, key: MomentSpec) -> float:
        (p,) = key.powers
        if p > len(self.raw):
            raise MissingMoment(f"IID raw moment of order {p} not supplied")
        return self.raw[p - 1]

    @classmethod
    def standard_normal(cls, max_order: int = 16) -> "IidAutomoments":
        # E[z^r] = (r-1)!! for even r
        raw = [0.0 if r % 2 else float(math.prod(range(r - 1, 0, -2))) for r in range(1, max_order + 1)]
        return cls(raw)

    @classmethod
    def uniform(cls, a: float, b: float, max_order: int = 16) -> "IidAutomoments":
        raw = [(b ** (r + 1) - a ** (r + 1)) / ((r + 1) * (b - a)) for r in range(1, max_order + 1)]
        return cls(raw)


def mean_with_se(x: np.ndarray, n_batches: int = 50) -> tuple[float, float]:
    """Sample mean and batch-means standard error along axis 0.

    Non-overlapping batches absorb serial correlation as long as each batch
    is much longer than the dependence horizon.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0] // n_batches * n_batches
    if n == 0:
        raise InsufficientData("not enough samples for batch means")
    batches = x[:n].reshape((n_batches, -1) + x.shape[1:]).mean(axis=1)
    return x.mean(axis=0), batches.std(axis=0, ddof=1) / math.sqrt(n_batches)
