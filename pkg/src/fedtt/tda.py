"""Traffic domain adapter: move source-city frames into the target city's domain.

Two transformation matrices are fitted once by gradient descent (one from the
road networks, one from the domain prototypes) and then frozen.  A generator
with three dense branches maps a source frame to the target sensor layout;
it is trained to stay close to the target prototype while fooling a server
discriminator (target vs transformed) and a client discriminator (aggregate
vs own transformed data).

Frames are arrays shaped (N, sensors, features).  Discriminator labels: 0 for
transformed source data, 1 for the other class (target data on the server,
aggregated data on a client).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import TrafficSeries
from .nn import MLP, Optimizer, OptimizerConfig, TrainingDivergedError, nll_loss, softmax

log = logging.getLogger(__name__)

TRANSFORMED, OTHER = 0, 1


def compute_prototype(series: TrafficSeries | np.ndarray) -> np.ndarray:
    """Entrywise mean frame of a (fully imputed) series."""
    values = series.values if isinstance(series, TrafficSeries) else np.asarray(series, dtype=float)
    if values.shape[0] == 0:
        raise ValueError("cannot take the prototype of an empty series")
    return values.mean(axis=0)


# ---------------------------------------------------------------------------
# Transformation matrices
# ---------------------------------------------------------------------------

@dataclass
class FitConfig:
    steps: int = 2000
    init_scale: float = 0.01
    identity_init: bool = True
    rtol: float = 1e-15
    seed: int = 0


@dataclass
class TransformFit:
    matrix: np.ndarray
    residual: float      # Frobenius norm of the fitting error
    objective: float     # squared Frobenius norm
    steps: int


@dataclass
class TransformBundle:
    a_net: np.ndarray
    a_proto: np.ndarray
    residual_net: float = 0.0
    residual_proto: float = 0.0

    def __post_init__(self):
        if self.a_net.shape != self.a_proto.shape:
            raise ValueError("transform matrices must share the target x source shape")
        if not (np.all(np.isfinite(self.a_net)) and np.all(np.isfinite(self.a_proto))):
            raise ValueError("transform matrices must be finite")

    @property
    def target_sensors(self) -> int:
        return self.a_net.shape[0]

    @property
    def source_sensors(self) -> int:
        return self.a_net.shape[1]

    def blocks(self) -> list[np.ndarray]:
        return [self.a_net, self.a_proto]


def _init_matrix(shape, cfg: FitConfig) -> np.ndarray:
    if cfg.identity_init and shape[0] == shape[1]:
        return np.eye(shape[0])
    return np.random.default_rng(cfg.seed).normal(0.0, cfg.init_scale, shape)


def network_objective(a: np.ndarray, adj_r: np.ndarray, adj_s: np.ndarray):
    """||A adj_r A^T - adj_s||_F^2 and its gradient wrt A."""
    err = a @ adj_r @ a.T - adj_s
    grad = 2.0 * (err @ a @ adj_r.T + err.T @ a @ adj_r)
    return float((err ** 2).sum()), grad


def prototype_objective(a: np.ndarray, p_r: np.ndarray, p_s: np.ndarray):
    """||A p_r - p_s||_F^2 and its gradient wrt A."""
    err = a @ p_r - p_s
    return float((err ** 2).sum()), 2.0 * err @ p_r.T


def network_line(a, d, adj_r, adj_s) -> np.ndarray:
    """Coefficients (c0..c4) of t -> network objective at A + t D."""
    e0 = a @ adj_r @ a.T - adj_s
    m1 = d @ adj_r @ a.T + a @ adj_r @ d.T
    m2 = d @ adj_r @ d.T
    return np.array([(e0 * e0).sum(), 2 * (e0 * m1).sum(), (m1 * m1).sum() + 2 * (e0 * m2).sum(),
                     2 * (m1 * m2).sum(), (m2 * m2).sum()])


def prototype_line(a, d, p_r, p_s) -> np.ndarray:
    e0, m1 = a @ p_r - p_s, d @ p_r
    return np.array([(e0 * e0).sum(), 2 * (e0 * m1).sum(), (m1 * m1).sum()])


def polynomial_argmin(coeffs: np.ndarray) -> float:
    """Global minimiser over t of sum_k coeffs[k] t^k (0 if unbounded or flat)."""
    c = np.trim_zeros(np.asarray(coeffs, float), "b")
    if c.size < 3:
        return 0.0
    deriv = np.polynomial.polynomial.polyder(c)
    cands = [0.0] + [r.real for r in np.polynomial.polynomial.polyroots(deriv)
                     if abs(r.imag) <= 1e-9 * max(1.0, abs(r.real))]
    vals = np.polynomial.polynomial.polyval(np.array(cands), c)
    return float(cands[int(np.argmin(vals))])


def _descend(objective, line, a: np.ndarray, cfg: FitConfig) -> TransformFit:
    """Polak-Ribiere+ conjugate gradient with exact line search.

    Both objectives are polynomials along any line, so the step length is the
    global minimiser of that polynomial.  The direction restarts from the
    steepest descent every ``a.size`` steps.
    """
    f, g = objective(a)
    d = -g
    done = 0
    for done in range(1, cfg.steps + 1):
        if f == 0.0 or not (g ** 2).sum() > 0.0:
            break
        t = polynomial_argmin(line(a, d))
        cand = a + t * d
        fc, gc = objective(cand)
        if not np.isfinite(fc):
            raise TrainingDivergedError(done, "transform fit")
        steepest = np.array_equal(d, -g)
        if f - fc <= cfg.rtol * f:
            if steepest:
                break
            d = -g  # conjugate direction made no progress
            continue
        beta = max(0.0, float((gc * (gc - g)).sum() / (g * g).sum()))
        if done % a.size == 0:
            beta = 0.0
        a, f, g = cand, fc, gc
        d = -g + beta * d
        if (d * g).sum() >= 0:
            d = -g
    return TransformFit(a, float(np.sqrt(f)), f, done)


def fit_network_transform(adj_r, adj_s, cfg: FitConfig | None = None) -> TransformFit:
    """Fit A (|target| x |source|) with A adj_r A^T ~= adj_s."""
    cfg = cfg or FitConfig()
    adj_r, adj_s = np.asarray(adj_r, float), np.asarray(adj_s, float)
    if adj_r.shape[0] != adj_r.shape[1] or adj_s.shape[0] != adj_s.shape[1]:
        raise ValueError("adjacency matrices must be square")
    a0 = _init_matrix((adj_s.shape[0], adj_r.shape[0]), cfg)
    return _descend(lambda a: network_objective(a, adj_r, adj_s),
                    lambda a, d: network_line(a, d, adj_r, adj_s), a0, cfg)


def fit_prototype_transform(p_r, p_s, cfg: FitConfig | None = None) -> TransformFit:
    """Fit A (|target| x |source|) with A p_r ~= p_s."""
    cfg = cfg or FitConfig()
    p_r, p_s = np.asarray(p_r, float), np.asarray(p_s, float)
    if p_r.shape[1] != p_s.shape[1]:
        raise ValueError(f"prototype feature counts differ: {p_r.shape} vs {p_s.shape}")
    a0 = _init_matrix((p_s.shape[0], p_r.shape[0]), cfg)
    return _descend(lambda a: prototype_objective(a, p_r, p_s),
                    lambda a, d: prototype_line(a, d, p_r, p_s), a0, cfg)


def fit_transforms(adj_r, adj_s, p_r, p_s, cfg: FitConfig | None = None) -> TransformBundle:
    net = fit_network_transform(adj_r, adj_s, cfg)
    proto = fit_prototype_transform(p_r, p_s, cfg)
    return TransformBundle(net.matrix, proto.matrix, net.residual, proto.residual)


# ---------------------------------------------------------------------------
# Generator and discriminators
# ---------------------------------------------------------------------------

def _standard(center, scale, sensors: int, features: int):
    c = np.zeros((sensors, features)) if center is None else np.asarray(center, dtype=float)
    s = np.ones(features) if scale is None else np.asarray(scale, dtype=float)
    if c.shape != (sensors, features) or s.shape != (features,):
        raise ValueError("standardisation statistics do not match the frame shape")
    if np.any(s <= 0):
        raise ValueError("standardisation scale must be positive")
    return c, s


def domain_statistics(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Prototype frame and per-feature spread, used to standardise network inputs."""
    frames = np.asarray(frames, dtype=float)
    spread = frames.std(axis=(0, 1))
    return frames.mean(axis=0), np.where(spread > 0, spread, 1.0)


@dataclass
class GeneratorParams:
    """Three dense branches plus fixed input statistics (``center``, ``scale``).

    Source frames are standardised as ``(x - center) / scale`` before entering
    the branches; the statistics are not trained.
    """

    net_branch: MLP
    proto_branch: MLP
    direct_branch: MLP
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def create(cls, source_sensors: int, target_sensors: int, features: int = 3, hidden: int = 1024,
               seed: int = 0, center=None, scale=None) -> "GeneratorParams":
        rng = np.random.default_rng(seed)
        s_in, r_in, out = target_sensors * features, source_sensors * features, target_sensors * features
        c, sc = _standard(center, scale, source_sensors, features)
        return cls(MLP.create([s_in, hidden, hidden, out], rng),
                   MLP.create([s_in, hidden, hidden, out], rng),
                   MLP.create([r_in, hidden, hidden, out], rng), c, sc)

    def branches(self) -> tuple[MLP, MLP, MLP]:
        return self.net_branch, self.proto_branch, self.direct_branch

    def blocks(self) -> list[np.ndarray]:
        return [b for br in self.branches() for b in br.blocks()]

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(*(br.copy() for br in self.branches()), self.center.copy(), self.scale.copy())


@dataclass
class DiscriminatorParams:
    """Two-way classifier over standardised target-layout frames."""

    net: MLP
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def create(cls, target_sensors: int, features: int = 3, hidden: int = 1024, seed: int = 0,
               center=None, scale=None):
        rng = np.random.default_rng(seed)
        d = target_sensors * features
        return cls(MLP.create([d, hidden, hidden, 2], rng), *_standard(center, scale, target_sensors, features))

    def blocks(self) -> list[np.ndarray]:
        return self.net.blocks()

    def copy(self) -> "DiscriminatorParams":
        return DiscriminatorParams(self.net.copy(), self.center.copy(), self.scale.copy())

    def inputs(self, frames: np.ndarray) -> np.ndarray:
        return ((frames - self.center) / self.scale).reshape(frames.shape[0], -1)

    def probabilities(self, frames: np.ndarray) -> np.ndarray:
        return softmax(self.net.forward(self.inputs(frames)))


def _branch_inputs(frames: np.ndarray, tb: TransformBundle):
    n = frames.shape[0]
    return (np.einsum("sr,nrf->nsf", tb.a_net, frames).reshape(n, -1),
            np.einsum("sr,nrf->nsf", tb.a_proto, frames).reshape(n, -1),
            frames.reshape(n, -1))


def _as_batch(frames) -> np.ndarray:
    x = np.asarray(getattr(frames, "values", frames), dtype=float)
    return x[None] if x.ndim == 2 else x


def generate(frames, gen: GeneratorParams, tb: TransformBundle, keep: bool = False):
    """Transformed frames (N, |target|, F): the sum of the three branch outputs."""
    x = _as_batch(frames)
    if x.shape[1] != tb.source_sensors:
        raise ValueError(f"frames have {x.shape[1]} sensors, transforms expect {tb.source_sensors}")
    if x.shape[1] * x.shape[2] != gen.direct_branch.sizes[0]:
        raise ValueError("frames do not match the generator input width")
    out = 0.0
    caches = []
    z = (x - gen.center) / gen.scale
    for branch, u in zip(gen.branches(), _branch_inputs(z, tb)):
        y, acts = branch.forward(u, keep=True)
        out = out + y
        caches.append(acts)
    out = out.reshape(x.shape[0], tb.target_sensors, -1)
    return (out, caches) if keep else out


def generator_backward(gen: GeneratorParams, caches, grad_out: np.ndarray) -> list[np.ndarray]:
    g = grad_out.reshape(grad_out.shape[0], -1)
    grads: list[np.ndarray] = []
    for branch, acts in zip(gen.branches(), caches):
        gb, _ = branch.backward(acts, g)
        grads += gb
    return grads


def alignment_loss(transformed: np.ndarray, prototype: np.ndarray):
    """Mean |transformed - prototype| over frames and entries, with its gradient."""
    diff = transformed - prototype
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def discriminator_loss(d: DiscriminatorParams, frames: np.ndarray, labels) -> float:
    """Mean negative log-probability of each frame's true class."""
    return discriminator_loss_grad(d, frames, labels)[0]


def discriminator_loss_grad(d: DiscriminatorParams, frames: np.ndarray, labels):
    """Loss, parameter gradients and input gradient (same shape as ``frames``)."""
    logits, acts = d.net.forward(d.inputs(frames), keep=True)
    loss, g = nll_loss(logits, labels)
    grads, gin = d.net.backward(acts, g)
    return loss, grads, gin.reshape(frames.shape) / d.scale


def discriminator_accuracy(d: DiscriminatorParams, frames: np.ndarray, labels) -> float:
    return float((d.probabilities(frames).argmax(axis=1) == np.asarray(labels)).mean())


def mixed_batch(transformed: np.ndarray, other: np.ndarray):
    frames = np.concatenate([transformed, other])
    labels = np.r_[np.full(len(transformed), TRANSFORMED), np.full(len(other), OTHER)]
    return frames, labels


@dataclass
class GeneratorObjective:
    """Alignment minus the weighted server and client discriminator losses.

    The server term scores transformed frames against ``target`` frames, the
    client term against ``aggregate`` frames; either term is dropped when its
    discriminator is missing.  Generator gradients flow only through the
    transformed frames.
    """

    tb: TransformBundle
    source: np.ndarray
    prototype: np.ndarray
    d_server: DiscriminatorParams | None = None
    d_client: DiscriminatorParams | None = None
    target: np.ndarray | None = None
    aggregate: np.ndarray | None = None
    lambda1: float = 0.7
    lambda2: float = 0.4

    def terms(self, gen: GeneratorParams) -> dict[str, float]:
        x = generate(self.source, gen, self.tb)
        out = {"alignment": alignment_loss(x, self.prototype)[0], "server": 0.0, "client": 0.0}
        if self.d_server is not None:
            other = self.target if self.target is not None else x[:0]
            out["server"] = discriminator_loss(self.d_server, *mixed_batch(x, other))
        if self.d_client is not None and self.aggregate is not None:
            out["client"] = discriminator_loss(self.d_client, *mixed_batch(x, self.aggregate))
        out["total"] = out["alignment"] - self.lambda1 * out["server"] - self.lambda2 * out["client"]
        return out

    def loss_and_grad(self, gen: GeneratorParams):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be non-negative")
        x, caches = generate(self.source, gen, self.tb, keep=True)
        n = len(x)
        loss, dx = alignment_loss(x, self.prototype)
        for d, other, lam in ((self.d_server, self.target if self.target is not None else x[:0], self.lambda1),
                              (self.d_client, self.aggregate, self.lambda2)):
            if d is None or other is None or lam == 0.0:
                continue
            l_d, _, gin = discriminator_loss_grad(d, *mixed_batch(x, other))
            loss -= lam * l_d
            dx = dx - lam * gin[:n]
        return loss, generator_backward(gen, caches, dx)


def generator_total_loss(gen: GeneratorParams, tb: TransformBundle, d_server, d_client, source,
                         prototype, target=None, aggregate=None, lambda1: float = 0.7,
                         lambda2: float = 0.4) -> float:
    return GeneratorObjective(tb, _as_batch(source), prototype, d_server, d_client, target, aggregate,
                              lambda1, lambda2).loss_and_grad(gen)[0]


def _check_finite(grads, what: str):
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergedError(0, f"{what} gradient")


def train_step_generator(gen: GeneratorParams, objective: GeneratorObjective, opt: Optimizer) -> float:
    """One descent step on the generator objective; returns the pre-step loss."""
    loss, grads = objective.loss_and_grad(gen)
    _check_finite(grads, "generator")
    opt.step(gen.blocks(), grads)
    return loss


def train_step_discriminator(d: DiscriminatorParams, frames: np.ndarray, labels, opt: Optimizer) -> float:
    loss, grads, _ = discriminator_loss_grad(d, frames, labels)
    _check_finite(grads, "discriminator")
    opt.step(d.blocks(), grads)
    return loss


# ---------------------------------------------------------------------------
# Stand-alone adversarial training (one source, server discriminator only)
# ---------------------------------------------------------------------------

def adversarial_optimizer(lr: float = 1e-3, epochs: int = 150) -> OptimizerConfig:
    """Optimistic Adam with beta1 = 0.5 and a linearly decaying step."""
    return OptimizerConfig("adam", lr, epochs, beta1=0.5, optimistic=True, schedule="linear")


@dataclass
class AdapterConfig:
    epochs: int = 150
    batch: int = 32
    hidden: int = 32
    lambda1: float = 0.7
    gen_opt: OptimizerConfig = field(default_factory=adversarial_optimizer)
    dis_opt: OptimizerConfig = field(default_factory=adversarial_optimizer)
    seed: int = 0


@dataclass
class AdapterRun:
    gen: GeneratorParams
    dis: DiscriminatorParams
    alignment: list[float]
    dis_loss: list[float]


def train_adapter(source: np.ndarray, target: np.ndarray, prototype: np.ndarray, tb: TransformBundle,
                  cfg: AdapterConfig | None = None, gen: GeneratorParams | None = None,
                  dis: DiscriminatorParams | None = None) -> AdapterRun:
    """Alternate one discriminator step and one generator step per batch.

    New networks standardise their inputs with the statistics of ``source``
    (generator) and ``target`` (discriminator).  ``alignment`` holds the
    alignment loss over the whole source set, measured before training and
    after every epoch.
    """
    cfg = cfg or AdapterConfig()
    rng = np.random.default_rng(cfg.seed)
    f = source.shape[2]
    if gen is None:
        gen = GeneratorParams.create(tb.source_sensors, tb.target_sensors, f, cfg.hidden, cfg.seed,
                                     *domain_statistics(source))
    if dis is None:
        dis = DiscriminatorParams.create(tb.target_sensors, f, cfg.hidden, cfg.seed + 1,
                                         *domain_statistics(target))
    g_opt, d_opt = cfg.gen_opt.make(), cfg.dis_opt.make()
    align = [alignment_loss(generate(source, gen, tb), prototype)[0]]
    d_trace = []
    for epoch in range(cfg.epochs):
        g_opt.progress = d_opt.progress = epoch / cfg.epochs
        src_order = rng.permutation(len(source))
        tgt_order = rng.permutation(len(target))
        for b in range(0, len(source), cfg.batch):
            src = source[src_order[b:b + cfg.batch]]
            tgt = target[tgt_order[np.arange(b, b + len(src)) % len(target)]]
            x = generate(src, gen, tb)
            d_trace.append(train_step_discriminator(dis, *mixed_batch(x, tgt), d_opt))
            obj = GeneratorObjective(tb, src, prototype, d_server=dis, target=tgt, lambda1=cfg.lambda1)
            train_step_generator(gen, obj, g_opt)
        align.append(alignment_loss(generate(source, gen, tb), prototype)[0])
    return AdapterRun(gen, dis, align, d_trace)
