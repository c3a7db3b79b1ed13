"""Downstream traffic predictors: T input frames in, T' frames out.

Two convex reference models share one contract (``predict``, ``blocks``,
``loss_and_grad``): a historical mean over the input window and a per-sensor
linear autoregression with one direct head per horizon step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .data import FEATURES, EmptyInputError, PredictionWindow, mae, rmse, stack_windows
from .nn import OptimizerConfig, masked_mae, run_descent


class PredictorModel(Protocol):
    history: int
    horizon: int

    def predict(self, inputs: np.ndarray) -> np.ndarray: ...

    def blocks(self) -> list[np.ndarray]: ...

    def loss_and_grad(self, inputs, targets, masks) -> tuple[float, list[np.ndarray]]: ...


def _batch(inputs: np.ndarray, history: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != history:
        raise ValueError(f"expected {history} input frames, got shape {np.shape(inputs)}")
    return x, single


@dataclass
class HistoricalMean:
    """Every predicted frame is the mean of the input frames."""

    history: int = 12
    horizon: int = 3

    def blocks(self) -> list[np.ndarray]:
        return []

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        x, single = _batch(inputs, self.history)
        out = np.repeat(x.mean(axis=1, keepdims=True), self.horizon, axis=1)
        return out[0] if single else out

    def loss_and_grad(self, inputs, targets, masks):
        loss, _ = masked_mae(self.predict(inputs), targets, masks[..., None])
        return loss, []


@dataclass
class LinearARPredictor:
    """``y[h, m, f] = sum_t weights[m, t, h] * x[t, m, f] + bias[m, f, h]``."""

    weights: np.ndarray  # (M, T, T')
    bias: np.ndarray     # (M, F, T')

    @classmethod
    def persistence(cls, sensors: int, features: int = 3, history: int = 12, horizon: int = 3):
        w = np.zeros((sensors, history, horizon))
        w[:, -1, :] = 1.0
        return cls(w, np.zeros((sensors, features, horizon)))

    @property
    def history(self) -> int:
        return self.weights.shape[1]

    @property
    def horizon(self) -> int:
        return self.weights.shape[2]

    def blocks(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        x, single = _batch(inputs, self.history)
        if x.shape[2:] != self.bias.shape[:2]:
            raise ValueError(f"frames {x.shape[2:]} do not match model sensors/features {self.bias.shape[:2]}")
        out = np.einsum("ntmf,mth->nhmf", x, self.weights) + self.bias.transpose(2, 0, 1)
        return out[0] if single else out

    def loss_and_grad(self, inputs, targets, masks):
        loss, g = masked_mae(self.predict(inputs), targets, masks[..., None])
        return loss, [np.einsum("nhmf,ntmf->mth", g, inputs), g.sum(axis=0).transpose(1, 2, 0)]

    def ridge_fit(self, inputs, targets, masks, ridge: float = 1.0) -> None:
        """Least squares per (sensor, horizon step), shrunk towards persistence.

        ``ridge`` is the penalty per window on ``|w - w_persist|^2 + |b|^2``.
        """
        n, T, M, F = inputs.shape
        prior = np.zeros(T + F)
        prior[T - 1] = 1.0
        eye_f = np.eye(F)
        for m in range(M):
            ctx = inputs[:, :, m, :].transpose(0, 2, 1)  # (n, F, T)
            design = np.concatenate([ctx, np.broadcast_to(eye_f, (n, F, F))], axis=2)
            for h in range(self.horizon):
                ok = masks[:, h, m].astype(bool)
                if not ok.any():
                    continue
                a = design[ok].reshape(-1, T + F)
                y = targets[ok, h, m, :].reshape(-1)
                lam = ridge * ok.sum()
                sol = np.linalg.solve(a.T @ a + lam * np.eye(T + F), a.T @ y + lam * prior)
                self.weights[m, :, h] = sol[:T]
                self.bias[m, :, h] = sol[T:]


def make_predictor(kind: str, sensors: int, features: int = 3, history: int = 12, horizon: int = 3):
    if kind == "mean":
        return HistoricalMean(history, horizon)
    if kind == "ar":
        return LinearARPredictor.persistence(sensors, features, history, horizon)
    raise ValueError(f"unknown predictor {kind!r} (expected 'mean' or 'ar')")


def _stack(windows):
    if isinstance(windows, tuple):
        return windows
    if not windows:
        raise EmptyInputError("no training windows")
    return stack_windows(windows)


def fit(model: PredictorModel, windows: Sequence[PredictionWindow] | tuple, opt: OptimizerConfig,
        ridge: float | None = None) -> list[float]:
    """Minimise MAE over ``windows``; returns the per-epoch loss trace.

    With ``ridge`` set, models that support it first get a closed-form
    least-squares start.  ``windows`` may be pre-stacked ``(inputs, targets, masks)``.
    """
    inputs, targets, masks = _stack(windows)
    if ridge is not None and opt.epochs > 0 and hasattr(model, "ridge_fit"):
        model.ridge_fit(inputs, targets, masks, ridge)
    if not model.blocks():
        return [model.loss_and_grad(inputs, targets, masks)[0] for _ in range(opt.epochs)]
    return run_descent(model, lambda: model.loss_and_grad(inputs, targets, masks), opt)


def predict(model: PredictorModel, inputs: np.ndarray) -> np.ndarray:
    out = model.predict(inputs)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite prediction")
    return out


@dataclass(frozen=True)
class Evaluation:
    """Per-feature metrics, averaged over the horizon and at its final step."""

    mae: np.ndarray
    rmse: np.ndarray
    mae_final: np.ndarray
    rmse_final: np.ndarray

    def overall_mae(self) -> float:
        return float(self.mae.mean())

    def table(self, names: Sequence[str] = FEATURES) -> str:
        head = "metric      " + "".join(f"{n:>12}" for n in names)
        rows = [head]
        for label, vals in (("MAE", self.mae), ("RMSE", self.rmse),
                            ("MAE@last", self.mae_final), ("RMSE@last", self.rmse_final)):
            rows.append(f"{label:<12}" + "".join(f"{v:12.4f}" for v in vals))
        return "\n".join(rows)


def evaluate(model: PredictorModel, windows: Sequence[PredictionWindow] | tuple,
             scale: np.ndarray | None = None) -> Evaluation:
    """Metrics over all windows per feature column.

    ``scale`` (per feature) maps raw-unit windows into the model's space:
    inputs are divided by it and predictions multiplied back.
    """
    inputs, targets, masks = _stack(windows)
    s = np.ones(targets.shape[-1]) if scale is None else np.asarray(scale, dtype=float)
    pred = predict(model, inputs / s) * s
    feats = range(targets.shape[-1])
    return Evaluation(
        np.array([mae(pred[..., f], targets[..., f], masks) for f in feats]),
        np.array([rmse(pred[..., f], targets[..., f], masks) for f in feats]),
        np.array([mae(pred[:, -1, :, f], targets[:, -1, :, f], masks[:, -1]) for f in feats]),
        np.array([rmse(pred[:, -1, :, f], targets[:, -1, :, f], masks[:, -1]) for f in feats]),
    )
