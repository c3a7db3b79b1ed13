"""Traffic view imputation: spatial view extension then bidirectional temporal enhancement.

The spatial stage turns each sensor's normalized distance row into a K-head
feature (a two-layer dense network stands in for a graph attention model) and
extends the observed sensors' readings to every sensor through an affine
extension head averaged over sampled multi-level subviews.  The temporal stage
refines the extended frames with a forward and a backward one-step predictor
and averages them.  Observed readings are never altered.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import EmptyInputError, TrafficFrame, TrafficSeries
from .graph import DistanceMatrix
from .nn import MLP, OptimizerConfig, masked_mae, run_descent, uniform_init

log = logging.getLogger(__name__)


class BoundaryError(IndexError):
    """Too few frames on both sides of a timestep for temporal enhancement."""


# ---------------------------------------------------------------------------
# Subviews
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubView:
    level: int
    members: tuple[tuple[int, np.ndarray], ...]

    def __post_init__(self):
        ids = [m for m, _ in self.members]
        if self.level != len(ids) or len(set(ids)) != len(ids):
            raise ValueError("subview level must equal its number of distinct members")


@dataclass(frozen=True)
class TrafficView:
    time: int
    frame: TrafficFrame
    subviews: dict[int, list[SubView]]


def build_subviews(frame: TrafficFrame, budget: int = 8, seed: int = 0, time: int = 0) -> TrafficView:
    """Sample up to ``budget`` distinct sensor combinations at every level 1..|available|."""
    avail = frame.available
    n = len(avail)
    if n == 0:
        raise EmptyInputError("frame has no available sensors")
    if budget < 1:
        raise ValueError("budget must be positive")
    rng = np.random.default_rng(seed)
    levels: dict[int, list[SubView]] = {}
    for i in range(1, n + 1):
        total = comb(n, i)
        if total <= budget:
            combos = list(itertools.combinations(range(n), i))
        else:
            picked: set[tuple[int, ...]] = set()
            while len(picked) < budget:
                picked.add(tuple(sorted(rng.choice(n, size=i, replace=False).tolist())))
            combos = sorted(picked)
        levels[i] = [SubView(i, tuple((int(avail[k]), frame.values[avail[k]]) for k in c)) for c in combos]
    return TrafficView(time, frame, levels)


def subview_weights(view: TrafficView) -> np.ndarray:
    """Per-sensor weight each reading receives in the nested subview average.

    Averaging over levels, over combinations within a level and over members
    within a combination gives every member a share; the shares sum to one.
    """
    w = np.zeros(view.frame.sensor_count)
    levels = view.subviews
    for i, subs in levels.items():
        share = 1.0 / (len(levels) * len(subs) * i)
        for sv in subs:
            for m, _ in sv.members:
                w[m] += share
    return w


# ---------------------------------------------------------------------------
# Spatial view extension
# ---------------------------------------------------------------------------

@dataclass
class SpatialModelParams:
    """Distance-row feature network plus the affine extension head."""

    feature_net: MLP
    head_w: np.ndarray
    head_b: np.ndarray
    heads: int
    width: int

    @classmethod
    def create(cls, sensors: int, features: int = 3, heads: int = 2, width: int = 8,
               hidden: int = 16, seed: int = 0) -> "SpatialModelParams":
        rng = np.random.default_rng(seed)
        net = MLP.create([sensors, hidden, heads * width], rng)
        fan_in = heads * width * features
        return cls(net, uniform_init(rng, fan_in, (fan_in, sensors * features)),
                   np.zeros(sensors * features), heads, width)

    @property
    def sensors(self) -> int:
        return self.feature_net.sizes[0]

    @property
    def features(self) -> int:
        return self.head_w.shape[0] // (self.heads * self.width)

    def blocks(self) -> list[np.ndarray]:
        return self.feature_net.blocks() + [self.head_w, self.head_b]

    def copy(self) -> "SpatialModelParams":
        return SpatialModelParams(self.feature_net.copy(), self.head_w.copy(), self.head_b.copy(),
                                  self.heads, self.width)


def sensor_features(dist: DistanceMatrix | np.ndarray, params: SpatialModelParams) -> np.ndarray:
    """Per-sensor K x F2 features from normalized distance rows, shape (M, K, F2)."""
    rows = dist.normalized() if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=float)
    if rows.shape != (params.sensors, params.sensors):
        raise ValueError(f"distance matrix {rows.shape} does not match {params.sensors} sensors")
    return params.feature_net.forward(rows).reshape(params.sensors, params.heads, params.width)


def _extend_batch(params: SpatialModelParams, feats: np.ndarray, weights: np.ndarray, x: np.ndarray):
    """Extension head over a batch: weights (N, M), x (N, M, F) -> (N, M, F) and the pooled inputs."""
    hf = feats.reshape(feats.shape[0], -1)
    pooled = np.einsum("nm,ma,nmf->naf", weights, hf, x)
    z = pooled.reshape(x.shape[0], -1)
    out = z @ params.head_w + params.head_b
    return out.reshape(x.shape[0], params.sensors, -1), z


def spatial_extend(view: TrafficView, features: np.ndarray, params: SpatialModelParams) -> TrafficFrame:
    """Full-sensor frame: observed rows as given, the rest from the extension head."""
    frame = view.frame
    if features.shape != (params.sensors, params.heads, params.width):
        raise ValueError(f"features {features.shape} do not match the model")
    if frame.sensor_count != params.sensors or frame.values.shape[1] != params.features:
        raise ValueError("frame does not match the model dimensions")
    if not view.subviews:
        raise EmptyInputError("empty view")
    w = subview_weights(view)
    pred, _ = _extend_batch(params, features, w[None], frame.values[None])
    out = np.where(frame.availability[:, None], frame.values, pred[0])
    return TrafficFrame(out, frame.availability)


def _spatial_loss_grad(params: SpatialModelParams, rows: np.ndarray, weights: np.ndarray,
                       x: np.ndarray, loss_mask: np.ndarray):
    hidden_out, acts = params.feature_net.forward(rows, keep=True)
    pred, z = _extend_batch(params, hidden_out.reshape(params.sensors, params.heads, params.width),
                            weights, x)
    # mean over frames of the per-frame mean error on that frame's available sensors
    per_frame = loss_mask.sum(axis=1, keepdims=True) * x.shape[2]
    w = np.where(per_frame > 0, loss_mask / np.maximum(per_frame, 1), 0.0) / x.shape[0]
    diff = pred - x
    loss = float((np.abs(diff) * w[..., None]).sum())
    dpred = (np.sign(diff) * w[..., None]).reshape(x.shape[0], -1)
    g_head_w = z.T @ dpred
    g_head_b = dpred.sum(axis=0)
    dz = (dpred @ params.head_w.T).reshape(x.shape[0], -1, x.shape[2])
    dh = np.einsum("nm,naf,nmf->ma", weights, dz, x)
    g_net, _ = params.feature_net.backward(acts, dh)
    return loss, g_net + [g_head_w, g_head_b]


@dataclass
class SpatialTrainingSet:
    """Frozen training views: per-frame subview weights over the visible sensors."""

    rows: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    loss_mask: np.ndarray


def spatial_training_set(series: TrafficSeries, dist: DistanceMatrix, budget: int = 8,
                         holdout: float = 0.25, seed: int = 0) -> SpatialTrainingSet:
    """Build one training view per frame.

    A ``holdout`` share of each frame's available sensors is hidden from the
    view (at least one sensor stays visible) while the loss still covers every
    available sensor, so the head learns to predict sensors it cannot see.
    """
    if len(series) == 0:
        raise EmptyInputError("empty series")
    rng = np.random.default_rng(seed)
    weights = np.zeros(series.availability.shape)
    for t in range(len(series)):
        avail = np.flatnonzero(series.availability[t])
        if avail.size == 0:
            continue
        hide = rng.random(avail.size) < holdout
        if hide.all():
            hide[rng.integers(avail.size)] = False
        visible = np.zeros(series.sensor_count, dtype=bool)
        visible[avail[~hide]] = True
        view = build_subviews(TrafficFrame(series.values[t], visible), budget, int(rng.integers(2**31)), t)
        weights[t] = subview_weights(view)
    return SpatialTrainingSet(dist.normalized(), weights, series.values, series.availability.astype(float))


def train_spatial(params: SpatialModelParams, series: TrafficSeries, dist: DistanceMatrix,
                  opt: OptimizerConfig, budget: int = 8, holdout: float = 0.25, seed: int = 0,
                  training_set: SpatialTrainingSet | None = None):
    """Fit the spatial model in place by gradient descent; returns ``(params, loss trace)``."""
    ts = training_set or spatial_training_set(series, dist, budget, holdout, seed)

    def step():
        return _spatial_loss_grad(params, ts.rows, ts.weights, ts.values, ts.loss_mask)

    trace = run_descent(params, step, opt)
    if trace:
        log.debug("spatial loss %.5f -> %.5f over %d epochs", trace[0], trace[-1], len(trace))
    return params, trace


def spatial_extend_series(series: TrafficSeries, dist: DistanceMatrix, params: SpatialModelParams,
                          budget: int = 8, seed: int = 0) -> TrafficSeries:
    feats = sensor_features(dist, params)
    frames = []
    for t in range(len(series)):
        view = build_subviews(series[t], budget, seed + t, t)
        frames.append(spatial_extend(view, feats, params))
    return TrafficSeries.from_frames(frames, series.interval_minutes)


# ---------------------------------------------------------------------------
# Temporal view enhancement
# ---------------------------------------------------------------------------

class SequencePredictor(Protocol):
    """Maps a context of T frames (oldest first, nearest last) to the next frame."""

    history: int

    def predict(self, context: np.ndarray) -> np.ndarray: ...

    def loss_and_grad(self, context: np.ndarray, target: np.ndarray, mask: np.ndarray): ...

    def blocks(self) -> list[np.ndarray]: ...


@dataclass
class LinearAR:
    """Per-sensor linear autoregression over T lags, lag weights shared by features."""

    weights: np.ndarray  # (M, T)
    bias: np.ndarray     # (M, F)

    @classmethod
    def create(cls, sensors: int, history: int, features: int = 3) -> "LinearAR":
        w = np.zeros((sensors, history))
        w[:, -1] = 1.0  # persistence start
        return cls(w, np.zeros((sensors, features)))

    @property
    def history(self) -> int:
        return self.weights.shape[1]

    def blocks(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def predict(self, context: np.ndarray) -> np.ndarray:
        """context (N, T, M, F) -> (N, M, F)."""
        return np.einsum("ntmf,mt->nmf", context, self.weights) + self.bias

    def loss_and_grad(self, context, target, mask):
        loss, g = masked_mae(self.predict(context), target, mask[..., None])
        return loss, [np.einsum("nmf,ntmf->mt", g, context), g.sum(axis=0)]

    def warm_start(self, context, target, mask, ridge: float = 1e-8) -> None:
        """Least-squares initialisation, sensor by sensor, on the masked targets."""
        n, T, M, F = context.shape
        for m in range(M):
            ok = mask[:, m]
            if not ok.any():
                continue
            ctx = context[ok, :, m, :].transpose(0, 2, 1).reshape(-1, T)
            tgt = target[ok, m, :].reshape(-1)
            onehot = np.tile(np.eye(F), (int(ok.sum()), 1))
            design = np.hstack([ctx, onehot])
            gram = design.T @ design + ridge * np.eye(T + F)
            sol = np.linalg.solve(gram, design.T @ tgt)
            self.weights[m] = sol[:T]
            self.bias[m] = sol[T:]


@dataclass
class TemporalModelParams:
    forward: SequencePredictor
    backward: SequencePredictor

    def __post_init__(self):
        if self.forward.history != self.backward.history:
            raise ValueError("forward and backward predictors must share the window length")

    @classmethod
    def create(cls, sensors: int, history: int = 12, features: int = 3) -> "TemporalModelParams":
        return cls(LinearAR.create(sensors, history, features), LinearAR.create(sensors, history, features))

    @property
    def history(self) -> int:
        return self.forward.history

    def blocks(self) -> list[np.ndarray]:
        return self.forward.blocks() + self.backward.blocks()


def _contexts(values: np.ndarray, history: int, direction: str):
    """Stacked contexts and their target indices; backward contexts run from t+T down to t+1."""
    L = values.shape[0]
    if L <= history:
        return np.zeros((0, history) + values.shape[1:]), np.zeros(0, dtype=int)
    win = sliding_window_view(values, history, axis=0)  # (L-T+1, M, F, T)
    win = np.moveaxis(win, -1, 1)
    if direction == "forward":
        return win[:-1], np.arange(history, L)
    return win[1:, ::-1], np.arange(0, L - history)


def train_temporal(params: TemporalModelParams, series: TrafficSeries, opt: OptimizerConfig,
                   warm_start: bool = True):
    """Fit both directions on the extended series; loss is judged on available sensors only.

    ``series.values`` holds the spatially extended frames and ``series.availability``
    the original observation mask.  The trace records the mean of the two
    directions' errors.
    """
    T = params.history
    ctx_f, idx_f = _contexts(series.values, T, "forward")
    ctx_b, idx_b = _contexts(series.values, T, "backward")
    if idx_f.size == 0:
        raise EmptyInputError(f"series of length {len(series)} too short for history {T}")
    tgt_f, msk_f = series.values[idx_f], series.availability[idx_f]
    tgt_b, msk_b = series.values[idx_b], series.availability[idx_b]
    if warm_start and opt.epochs > 0:
        for model, c, t, m in ((params.forward, ctx_f, tgt_f, msk_f), (params.backward, ctx_b, tgt_b, msk_b)):
            if hasattr(model, "warm_start"):
                model.warm_start(c, t, m)

    def step():
        lf, gf = params.forward.loss_and_grad(ctx_f, tgt_f, msk_f)
        lb, gb = params.backward.loss_and_grad(ctx_b, tgt_b, msk_b)
        return 0.5 * (lf + lb), [0.5 * g for g in gf + gb]

    trace = run_descent(params, step, opt)
    return params, trace


def temporal_enhance(extended: TrafficSeries, t: int, params: TemporalModelParams) -> TrafficFrame:
    """Average of forward and backward one-step predictions at ``t``; observed rows kept.

    Near the series ends only the direction with a full context is used.
    """
    T = params.history
    L = len(extended)
    if not 0 <= t < L:
        raise IndexError(f"time {t} outside series of length {L}")
    preds = []
    if t >= T:
        preds.append(params.forward.predict(extended.values[None, t - T:t])[0])
    if t + T < L:
        preds.append(params.backward.predict(extended.values[None, t + 1:t + T + 1][:, ::-1])[0])
    if not preds:
        raise BoundaryError(f"time {t} has fewer than {T} frames on both sides")
    tv = preds[0] if len(preds) == 1 else 0.5 * (preds[0] + preds[1])
    avail = extended.availability[t]
    return TrafficFrame(np.where(avail[:, None], extended.values[t], tv), avail)


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, series: TrafficSeries) -> "FeatureScaler":
        obs = series.values[series.availability]
        if obs.size == 0:
            raise EmptyInputError("no observed readings to scale")
        std = obs.std(axis=0)
        return cls(obs.mean(axis=0), np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, features: int = 3) -> "FeatureScaler":
        return cls(np.zeros(features), np.ones(features))

    def transform(self, series: TrafficSeries) -> TrafficSeries:
        vals = np.where(series.availability[..., None], (series.values - self.mean) / self.std, 0.0)
        return TrafficSeries(vals, series.availability, series.interval_minutes, series.imputed)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class TVIConfig:
    heads: int = 2
    width: int = 8
    hidden: int = 16
    history: int = 12
    budget: int = 8
    holdout: float = 0.25
    spatial_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", 1e-2, 300))
    temporal_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", 1e-3, 100))
    seed: int = 0


@dataclass
class TVIModel:
    spatial: SpatialModelParams
    temporal: TemporalModelParams
    scaler: FeatureScaler
    budget: int = 8
    spatial_trace: list[float] = field(default_factory=list)
    temporal_trace: list[float] = field(default_factory=list)


def fit_tvi(series: TrafficSeries, dist: DistanceMatrix, cfg: TVIConfig | None = None) -> TVIModel:
    """Train spatial then temporal stages on one city's own data."""
    cfg = cfg or TVIConfig()
    scaler = FeatureScaler.fit(series)
    z = scaler.transform(series)
    spatial = SpatialModelParams.create(series.sensor_count, series.feature_count, cfg.heads, cfg.width,
                                        cfg.hidden, cfg.seed)
    _, s_trace = train_spatial(spatial, z, dist, cfg.spatial_opt, cfg.budget, cfg.holdout, cfg.seed)
    extended = spatial_extend_series(z, dist, spatial, cfg.budget, cfg.seed)
    temporal = TemporalModelParams.create(series.sensor_count, cfg.history, series.feature_count)
    t_trace: list[float] = []
    if len(series) > cfg.history:
        _, t_trace = train_temporal(temporal, extended, cfg.temporal_opt)
    return TVIModel(spatial, temporal, scaler, cfg.budget, s_trace, t_trace)


def impute(series: TrafficSeries, spatial: SpatialModelParams, temporal: TemporalModelParams,
           dist: DistanceMatrix, scaler: FeatureScaler | None = None, budget: int = 8,
           seed: int = 0) -> TrafficSeries:
    """Complete every frame; observed entries are copied through bit for bit.

    The result is fully available and ``imputed`` marks the entries that were filled.
    """
    scaler = scaler or FeatureScaler.identity(series.feature_count)
    z = scaler.transform(series)
    extended = spatial_extend_series(z, dist, spatial, budget, seed)
    filled = extended.values.copy()
    missing_t = np.flatnonzero(~series.availability.all(axis=1))
    for t in missing_t:
        try:
            filled[t] = temporal_enhance(extended, int(t), temporal).values
        except BoundaryError:
            pass  # too short for either direction: keep the spatial extension
    out = np.where(series.availability[..., None], series.values, scaler.inverse(filled))
    return TrafficSeries(out, np.ones_like(series.availability), series.interval_minutes,
                         ~series.availability)


def impute_with(model: TVIModel, series: TrafficSeries, dist: DistanceMatrix, seed: int = 0) -> TrafficSeries:
    return impute(series, model.spatial, model.temporal, dist, model.scaler, model.budget, seed)


# ---------------------------------------------------------------------------
# Baseline and evaluation helpers
# ---------------------------------------------------------------------------

def mean_fill(series: TrafficSeries) -> TrafficSeries:
    """Fill each missing reading with its sensor's observed mean (feature mean if never observed)."""
    avail = series.availability
    w = avail[..., None].astype(float)
    counts = w.sum(axis=0)
    overall = (series.values * w).sum(axis=(0, 1)) / max(avail.sum(), 1)
    per_sensor = np.where(counts > 0, (series.values * w).sum(axis=0) / np.maximum(counts, 1), overall)
    out = np.where(avail[..., None], series.values, per_sensor[None])
    return TrafficSeries(out, np.ones_like(avail), series.interval_minutes, ~avail)


def hide_readings(series: TrafficSeries, rate: float, seed: int = 0) -> tuple[TrafficSeries, np.ndarray]:
    """Drop available readings at ``rate``, keeping one per frame; returns the series and the hidden mask."""
    if not 0 <= rate < 1:
        raise ValueError("rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    avail = series.availability
    hidden = avail & (rng.random(avail.shape) < rate)
    left = avail & ~hidden
    for t in np.flatnonzero(avail.any(axis=1) & ~left.any(axis=1)):
        keep = rng.choice(np.flatnonzero(hidden[t]))
        hidden[t, keep] = False
    left = avail & ~hidden
    values = np.where(left[..., None], series.values, 0.0)
    return TrafficSeries(values, left, series.interval_minutes), hidden
