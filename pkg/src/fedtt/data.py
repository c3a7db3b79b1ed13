"""Traffic series containers, prediction windows, metrics and synthetic cities."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import RoadNetwork

FEATURES = ("flow", "speed", "occupancy")


class EmptyInputError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficFrame:
    """One timestep: ``values`` is sensors x features, ``availability`` flags observed rows."""

    values: np.ndarray
    availability: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        avail = np.array(self.availability, dtype=bool)
        if values.ndim != 2 or avail.shape != (values.shape[0],):
            raise DataError(f"frame shape mismatch: values {values.shape}, availability {avail.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("frame values must be finite")
        values.setflags(write=False)
        avail.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "availability", avail)

    @property
    def sensor_count(self) -> int:
        return self.values.shape[0]

    @property
    def available(self) -> np.ndarray:
        return np.flatnonzero(self.availability)


@dataclass(frozen=True)
class TrafficSeries:
    """Contiguous readings stored as arrays: ``values`` (T, M, F) and ``availability`` (T, M).

    ``imputed`` marks entries filled in by imputation; it is ``None`` for raw data.
    """

    values: np.ndarray
    availability: np.ndarray
    interval_minutes: float = 5.0
    imputed: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        avail = np.array(self.availability, dtype=bool)
        if values.ndim != 3 or avail.shape != values.shape[:2]:
            raise DataError(f"series shape mismatch: values {values.shape}, availability {avail.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("series values must be finite")
        if self.interval_minutes <= 0:
            raise DataError("interval_minutes must be positive")
        values.setflags(write=False)
        avail.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "availability", avail)
        if self.imputed is not None:
            imp = np.array(self.imputed, dtype=bool)
            if imp.shape != avail.shape:
                raise DataError("imputed mask shape mismatch")
            imp.setflags(write=False)
            object.__setattr__(self, "imputed", imp)

    @classmethod
    def from_frames(cls, frames: Sequence[TrafficFrame], interval_minutes: float = 5.0) -> "TrafficSeries":
        if not frames:
            raise EmptyInputError("no frames")
        shapes = {f.values.shape for f in frames}
        if len(shapes) != 1:
            raise DataError(f"frames disagree on shape: {sorted(shapes)}")
        return cls(np.stack([f.values for f in frames]), np.stack([f.availability for f in frames]),
                   interval_minutes)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, t: int) -> TrafficFrame:
        return TrafficFrame(self.values[t], self.availability[t])

    @property
    def frames(self) -> list[TrafficFrame]:
        return [self[t] for t in range(len(self))]

    @property
    def sensor_count(self) -> int:
        return self.values.shape[1]

    @property
    def feature_count(self) -> int:
        return self.values.shape[2]

    def slice(self, start: int, stop: int) -> "TrafficSeries":
        imp = None if self.imputed is None else self.imputed[start:stop]
        return TrafficSeries(self.values[start:stop], self.availability[start:stop],
                             self.interval_minutes, imp)


@dataclass(frozen=True)
class PredictionWindow:
    """``inputs`` (T, M, F) followed immediately by ``target`` (T', M, F)."""

    inputs: np.ndarray
    target: np.ndarray
    target_mask: np.ndarray
    start: int = 0


def make_windows(series: TrafficSeries, history: int = 12, horizon: int = 3,
                 stride: int = 1) -> list[PredictionWindow]:
    if history < 1 or horizon < 1 or stride < 1:
        raise ValueError("history, horizon and stride must be positive")
    n = len(series)
    if n < history + horizon:
        raise EmptyInputError(f"series of length {n} is shorter than {history}+{horizon}")
    out = []
    for s in range(0, n - history - horizon + 1, stride):
        out.append(PredictionWindow(series.values[s:s + history],
                                    series.values[s + history:s + history + horizon],
                                    series.availability[s + history:s + history + horizon],
                                    s))
    return out


def stack_windows(windows: Sequence[PredictionWindow]):
    """Batch windows into arrays ``(inputs, targets, masks)``."""
    if not windows:
        raise EmptyInputError("no windows")
    return (np.stack([w.inputs for w in windows]), np.stack([w.target for w in windows]),
            np.stack([w.target_mask for w in windows]))


def _metric_mask(truth: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.ones(truth.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != truth.shape:
        # sensor-level availability covers every feature of that sensor
        mask = np.broadcast_to(mask.reshape(mask.shape + (1,) * (truth.ndim - mask.ndim)), truth.shape)
    return mask


def mae(pred, truth, mask=None) -> float:
    """Mean absolute error over available entries."""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    m = _metric_mask(truth, mask)
    if not m.any():
        raise UndefinedMetricError("no available entries")
    return float(np.abs(pred - truth)[m].mean())


def rmse(pred, truth, mask=None) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    m = _metric_mask(truth, mask)
    if not m.any():
        raise UndefinedMetricError("no available entries")
    return float(np.sqrt(((pred - truth)[m] ** 2).mean()))


def split_series(series: TrafficSeries, fractions: Sequence[float] = (0.05, 0.10, 0.10)):
    """Chronological train/validation/test split taken from the start of the series.

    Whatever the fractions leave over (75% with the defaults) stays unused and is
    returned as the fourth element.
    """
    if any(f < 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise ValueError(f"invalid split fractions {fractions}")
    n = len(series)
    bounds = [0]
    for f in fractions:
        bounds.append(bounds[-1] + int(round(f * n)))
    bounds = [min(b, n) for b in bounds]
    parts = [series.slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    return (*parts, series.slice(bounds[-1], n))


# ---------------------------------------------------------------------------
# Synthetic multi-city data
# ---------------------------------------------------------------------------

# per-feature (level, spread, sign) applied to the unit latent signal
_FEATURE_MAP = np.array([[200.0, 80.0, 1.0], [60.0, 8.0, -1.0], [0.10, 0.04, 1.0]])


@dataclass
class SynthesisConfig:
    """Per-city sensor counts and affine shifts for :func:`synthesize_multi_city`.

    ``scales``/``offsets`` are per city, per feature; missing entries default to
    the identity shift.  ``noise`` is in units of each feature's spread.
    """

    sensor_counts: list[int] = field(default_factory=lambda: [12, 10, 14, 8])
    length: int = 600
    scales: list[list[float]] | None = None
    offsets: list[list[float]] | None = None
    noise: float = 0.1
    missing_rate: float = 0.0
    period: int = 48
    interval_minutes: float = 5.0
    grid_points: int = 64

    def __post_init__(self):
        if not self.sensor_counts or any(int(m) < 1 for m in self.sensor_counts):
            raise ValueError("sensor counts must be positive")
        if self.length < 1 or self.period < 2 or self.grid_points < 2:
            raise ValueError("length, period and grid_points must be positive")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        k = len(self.sensor_counts)
        self.scales = self.scales or [[1.0] * 3 for _ in range(k)]
        self.offsets = self.offsets or [[0.0] * 3 for _ in range(k)]
        if len(self.scales) != k or len(self.offsets) != k:
            raise ValueError("scales/offsets need one entry per city")


@dataclass(frozen=True)
class City:
    """A synthetic city: network, observed series and the complete ground truth."""

    network: RoadNetwork
    series: TrafficSeries
    truth: np.ndarray
    positions: np.ndarray


def corridor_network(positions: np.ndarray) -> RoadNetwork:
    """Chain graph over sorted positions plus skip-one shortcuts (weight = 1.2 x span)."""
    m = len(positions)
    edges = [(i, i + 1, float(positions[i + 1] - positions[i])) for i in range(m - 1)]
    edges += [(i, i + 2, 1.2 * float(positions[i + 2] - positions[i])) for i in range(m - 2)]
    return RoadNetwork(m, tuple(edges))


def _latent_field(cfg: SynthesisConfig, rng: np.random.Generator) -> np.ndarray:
    """Shared unit-scale signal on a reference corridor grid, shape (length, grid_points)."""
    L, G = cfg.length, cfg.grid_points
    t = np.arange(L)[:, None]
    p = np.linspace(0.0, 1.0, G)[None, :]
    phase = 2 * np.pi * t / cfg.period
    smooth = 0.8 * np.sin(phase - 1.5 * p) + 0.3 * np.sin(2 * phase + 0.7 - p)

    # slow random drive, spread over the grid by a graph-heat kernel
    lap = np.diag(np.r_[1.0, 2.0 * np.ones(G - 2), 1.0]) - np.eye(G, k=1) - np.eye(G, k=-1)
    kernel = np.linalg.inv(np.eye(G) + 30.0 * lap)
    drive = np.zeros((L, G))
    state = np.zeros(G)
    shocks = rng.normal(0.0, 1.0, (L, G))
    for i in range(L):
        state = 0.9 * state + shocks[i]
        drive[i] = state
    diffused = drive @ kernel.T
    diffused *= 0.35 / max(diffused.std(), 1e-12)
    return smooth + diffused


def synthesize_multi_city(cfg: SynthesisConfig, seed: int) -> list[City]:
    """Cities reading one shared latent field through their own affine feature shifts.

    Sensors sit at evenly spaced corridor positions, so cities with equal sensor
    counts and equal shifts differ only by their noise draw.  Availability drops
    each (time, sensor) independently at ``missing_rate``, keeping at least one
    sensor per frame.
    """
    root = np.random.default_rng(seed)
    latent = _latent_field(cfg, root)
    grid = np.linspace(0.0, 1.0, cfg.grid_points)
    cities = []
    for k, m in enumerate(cfg.sensor_counts):
        rng = np.random.default_rng([seed, k + 1])
        pos = np.linspace(0.0, 1.0, m) if m > 1 else np.array([0.5])
        z = np.stack([np.interp(pos, grid, row) for row in latent])
        level, spread, sign = _FEATURE_MAP.T
        base = level + spread * sign * z[..., None]
        scale = np.asarray(cfg.scales[k], dtype=float)
        offset = np.asarray(cfg.offsets[k], dtype=float)
        truth = scale * base + offset + cfg.noise * spread * np.abs(scale) * rng.normal(size=base.shape)
        avail = rng.random((cfg.length, m)) >= cfg.missing_rate
        empty = np.flatnonzero(~avail.any(axis=1))
        avail[empty, rng.integers(0, m, size=empty.size)] = True
        values = np.where(avail[..., None], truth, 0.0)
        series = TrafficSeries(values, avail, cfg.interval_minutes)
        cities.append(City(corridor_network(pos), series, truth, pos))
    return cities


# ---------------------------------------------------------------------------
# readings.csv
# ---------------------------------------------------------------------------

READINGS_HEADER = ["t", "sensor", "flow", "speed", "occ", "available"]


def write_readings_csv(series: TrafficSeries, path, imputed_column: bool = False) -> None:
    """Write one row per (t, sensor); ``imputed_column`` appends the sidecar flag."""
    header = READINGS_HEADER + (["imputed"] if imputed_column else [])
    imp = series.imputed if series.imputed is not None else np.zeros_like(series.availability)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(len(series)):
            for s in range(series.sensor_count):
                row = [t, s, *(repr(float(v)) for v in series.values[t, s]), int(series.availability[t, s])]
                if imputed_column:
                    row.append(int(imp[t, s]))
                w.writerow(row)


def read_readings_csv(path, sensor_count: int | None = None, interval_minutes: float = 5.0) -> TrafficSeries:
    """Parse ``readings.csv``; rows that are absent count as unavailable."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:6] != READINGS_HEADER:
            raise DataError(f"{path}: expected header {','.join(READINGS_HEADER)}")
        has_imp = len(header) > 6 and header[6] == "imputed"
        for line in reader:
            if not line:
                continue
            rows.append(line)
    if not rows:
        raise EmptyInputError(f"{path}: no readings")
    t_idx = np.array([int(r[0]) for r in rows])
    s_idx = np.array([int(r[1]) for r in rows])
    if t_idx.min() < 0 or s_idx.min() < 0:
        raise DataError(f"{path}: negative index")
    T = int(t_idx.max()) + 1
    M = sensor_count if sensor_count is not None else int(s_idx.max()) + 1
    if s_idx.max() >= M:
        raise DataError(f"{path}: sensor index {s_idx.max()} out of range for {M} sensors")
    values = np.zeros((T, M, 3))
    avail = np.zeros((T, M), dtype=bool)
    imputed = np.zeros((T, M), dtype=bool) if has_imp else None
    for r, t, s in zip(rows, t_idx, s_idx):
        if r[5] not in ("0", "1"):
            raise DataError(f"{path}: available must be 0 or 1, got {r[5]!r}")
        avail[t, s] = r[5] == "1"
        if avail[t, s]:
            values[t, s] = [float(x) for x in r[2:5]]
        if has_imp:
            imputed[t, s] = r[6] == "1"
    return TrafficSeries(values, avail, interval_minutes, imputed)
