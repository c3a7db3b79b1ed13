"""Experiment configuration: one JSON document, strict keys, flag overrides.

Precedence is command-line flags, then the file, then the defaults below.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints

from .data import SynthesisConfig
from .nn import OptimizerConfig
from .tda import adversarial_optimizer
from .tvi import TVIConfig


class ConfigError(ValueError):
    pass


@dataclass
class SynthesisSettings:
    sensor_counts: list[int] = field(default_factory=lambda: [12, 10, 14, 8])
    length: int = 600
    scales: list[list[float]] = field(default_factory=lambda: [[1.3, 0.8, 1.1], [0.7, 1.2, 0.9],
                                                               [1.1, 1.0, 0.8], [1.0, 1.0, 1.0]])
    offsets: list[list[float]] = field(default_factory=lambda: [[50.0, -5.0, 0.02], [-30.0, 8.0, -0.01],
                                                                [20.0, 3.0, 0.0], [0.0, 0.0, 0.0]])
    noise: float = 0.1
    missing_rate: float = 0.0
    period: int = 48

    def build(self) -> SynthesisConfig:
        try:
            return SynthesisConfig(**dataclasses.asdict(self))
        except ValueError as exc:
            raise ConfigError(f"synthesis: {exc}") from None


@dataclass
class ImputeSettings:
    heads: int = 2
    width: int = 8
    hidden: int = 16
    history: int = 12
    budget: int = 8
    holdout: float = 0.25
    spatial_lr: float = 1e-2
    spatial_epochs: int = 300
    temporal_lr: float = 1e-3
    temporal_epochs: int = 100
    evaluation_rate: float = 0.2  # share of observed readings hidden to score the imputer

    def build(self, seed: int) -> TVIConfig:
        return TVIConfig(self.heads, self.width, self.hidden, self.history, self.budget, self.holdout,
                         OptimizerConfig("adam", self.spatial_lr, self.spatial_epochs),
                         OptimizerConfig("adam", self.temporal_lr, self.temporal_epochs), seed)


@dataclass
class FederationSettings:
    rounds: int = 100
    batches: int = 4
    batch_frames: int = 32
    lambda1: float = 0.7
    lambda2: float = 0.4
    hidden: int = 32
    adversarial_lr: float = 1e-3
    freeze_period: int = 5
    fresh_period: int = 1
    transport: str = "inproc"
    timeout: float = 120.0
    predictor: str = "ar"
    predictor_lr: float = 1e-3
    predictor_epochs: int = 200
    ridge: float = 1.0
    history: int = 12
    horizon: int = 3

    def options(self) -> dict:
        """Keyword arguments for ``FederationConfig`` (everything but the data)."""
        return dict(rounds=self.rounds, batches=self.batches, batch_frames=self.batch_frames,
                    lambda1=self.lambda1, lambda2=self.lambda2, hidden=self.hidden,
                    gen_opt=adversarial_optimizer(self.adversarial_lr),
                    dis_opt=adversarial_optimizer(self.adversarial_lr),
                    predictor=self.predictor,
                    predictor_opt=OptimizerConfig("adam", self.predictor_lr, self.predictor_epochs),
                    ridge=self.ridge, history=self.history, horizon=self.horizon,
                    freeze_period=self.freeze_period, fresh_period=self.fresh_period,
                    transport=self.transport, timeout=self.timeout)


@dataclass
class ExperimentConfig:
    seed: int = 0
    deterministic: bool = False
    out: str = "fedtt-out"
    data_dir: str | None = None
    sources: list[str] | None = None
    target: str | None = None
    split: list[float] = field(default_factory=lambda: [0.05, 0.10, 0.10])
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    impute: ImputeSettings = field(default_factory=ImputeSettings)
    federation: FederationSettings = field(default_factory=FederationSettings)

    def validate(self) -> "ExperimentConfig":
        if len(self.split) != 3 or any(f <= 0 for f in self.split) or sum(self.split) > 1:
            raise ConfigError("split needs three positive fractions summing to at most 1")
        fed = self.federation
        if fed.rounds < 0 or fed.batches < 1 or fed.batch_frames < 1:
            raise ConfigError("federation: rounds >= 0, batches >= 1 and batch_frames >= 1 required")
        if fed.freeze_period < 1 or fed.fresh_period < 1:
            raise ConfigError("federation: freeze periods must be >= 1")
        if fed.lambda1 < 0 or fed.lambda2 < 0:
            raise ConfigError("federation: lambda weights must be non-negative")
        if fed.transport not in ("inproc", "tcp"):
            raise ConfigError(f"federation.transport must be 'inproc' or 'tcp', got {fed.transport!r}")
        if fed.predictor not in ("ar", "mean"):
            raise ConfigError(f"federation.predictor must be 'ar' or 'mean', got {fed.predictor!r}")
        if not 0 <= self.impute.evaluation_rate < 1:
            raise ConfigError("impute.evaluation_rate must lie in [0, 1)")
        self.synthesis.build()
        return self


def _coerce(tp, value, where: str):
    origin = get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return _build(tp, value, where)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        (inner,) = get_args(tp)
        return [_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is not None:  # Optional[...] written as X | None
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    raise ConfigError(f"{where}: unsupported type {tp}")


def _build(cls, doc: dict, where: str = ""):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join((where + '.' if where else '') + k for k in unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}" if where else k) for k, v in doc.items()}
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then the JSON file at ``path``, then non-None ``overrides`` (top-level keys)."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
    doc = {**doc, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    return _build(ExperimentConfig, doc).validate()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
