"""Small dense-network toolkit with explicit backpropagation.

Everything here works on float64 numpy arrays so that analytic gradients can be
checked against central finite differences.  A model is anything exposing
``blocks()``: an ordered list of parameter arrays that optimizers and
checkpoints mutate in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np


class Parameterized(Protocol):
    def blocks(self) -> list[np.ndarray]: ...


class TrainingDivergedError(FloatingPointError):
    """Raised when a training loss or gradient stops being finite."""

    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"{what} became non-finite at epoch {epoch}")
        self.epoch = epoch


def get_flat(model: Parameterized) -> np.ndarray:
    blocks = model.blocks()
    if not blocks:
        return np.zeros(0)
    return np.concatenate([b.ravel() for b in blocks])


def set_flat(model: Parameterized, flat: np.ndarray) -> None:
    pos = 0
    for b in model.blocks():
        b[...] = flat[pos:pos + b.size].reshape(b.shape)
        pos += b.size
    if pos != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, model has {pos}")


def flat_grads(grads: Sequence[np.ndarray]) -> np.ndarray:
    if not grads:
        return np.zeros(0)
    return np.concatenate([g.ravel() for g in grads])


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MLP:
    """Fully connected network with tanh hidden activations and a linear output.

    ``weights[k]`` has shape (fan_in, fan_out); inputs are row batches.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def create(cls, sizes: Sequence[int], rng: np.random.Generator) -> "MLP":
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"invalid layer sizes {list(sizes)}")
        weights = [uniform_init(rng, a, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [uniform_init(rng, a, (b,)) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MLP":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def blocks(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray, keep: bool = False):
        """Return the network output, plus the activation cache when ``keep``."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.tanh(h)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Backpropagate ``grad_out``; returns (parameter grads in block order, input grad)."""
        grads: list[np.ndarray] = []
        g = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                g = g * (1.0 - acts[k + 1] ** 2)
            grads = [acts[k].T @ g, g.sum(axis=0)] + grads
            g = g @ self.weights[k].T
        return grads, g


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def nll_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of ``labels`` and its gradient wrt ``logits``."""
    labels = np.asarray(labels, dtype=int)
    n = logits.shape[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def masked_mae(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray | None = None):
    """Mean |pred - truth| over entries where ``mask`` holds, with its gradient wrt pred.

    ``mask`` broadcasts against ``pred``; a missing mask means every entry counts.
    """
    diff = pred - truth
    if mask is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=float), diff.shape)
    count = w.sum()
    if count == 0:
        raise ValueError("no entries to average over")
    loss = float((np.abs(diff) * w).sum() / count)
    return loss, np.sign(diff) * w / count


@dataclass
class OptimizerConfig:
    """Gradient-descent settings shared by every trainer in the package."""

    method: str = "adam"  # "adam" or "gd"
    lr: float = 1e-2
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimistic: bool = False    # extrapolate with the previous update (adversarial games)
    schedule: str = "constant"  # or "linear": lr decays to zero as progress goes 0 -> 1

    def __post_init__(self):
        if self.method not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if self.schedule not in ("constant", "linear"):
            raise ValueError(f"unknown learning-rate schedule {self.schedule!r}")
        if self.lr < 0 or self.epochs < 0:
            raise ValueError("lr and epochs must be non-negative")

    def make(self) -> "Optimizer":
        return Optimizer(self)


@dataclass
class Optimizer:
    cfg: OptimizerConfig
    t: int = 0
    progress: float = 0.0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    last: list[np.ndarray] = field(default_factory=list)

    @property
    def lr(self) -> float:
        if self.cfg.schedule == "linear":
            return self.cfg.lr * max(0.0, 1.0 - self.progress)
        return self.cfg.lr

    def _apply(self, params, updates) -> None:
        lr = self.lr
        if not self.cfg.optimistic:
            for p, u in zip(params, updates):
                p -= lr * u
            return
        if not self.last:
            self.last = [np.zeros_like(p) for p in params]
        for p, u, prev in zip(params, updates, self.last):
            p -= lr * (2.0 * u - prev)
            prev[...] = u

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        cfg = self.cfg
        if cfg.method == "gd":
            self._apply(params, grads)
            return
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        updates = []
        for g, m, v in zip(grads, self.m, self.v):
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            updates.append((m / c1) / (np.sqrt(v / c2) + cfg.eps))
        self._apply(params, updates)


def run_descent(model: Parameterized, loss_and_grad: Callable[[], tuple[float, list[np.ndarray]]],
                opt: OptimizerConfig) -> list[float]:
    """Run ``opt.epochs`` full-batch steps; the trace holds the pre-step loss of each epoch."""
    trace: list[float] = []
    stepper = opt.make()
    params = model.blocks()
    for epoch in range(opt.epochs):
        stepper.progress = epoch / opt.epochs
        loss, grads = loss_and_grad()
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergedError(epoch, "gradient")
        trace.append(loss)
        stepper.step(params, grads)
    return trace
