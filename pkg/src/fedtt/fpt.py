"""Federated parallel training: clients adapt and share, the server aggregates and learns.

Each round, every client transforms a batch of its own frames into the target
layout, updates its generator and client discriminator, and sends the batch
through the secret-transmission protocol.  The server rebuilds the mean
transformed batch, trains its discriminator on it against the target's own
frames, and at the end of the round trains the predictor on the aggregated
data plus the target's local windows.

Quantities that cross the client/server boundary are read through freeze
caches.  ``Fr`` (period ``freeze_period``) holds the server discriminator
snapshot and the aggregated data.  ``Fr'`` (period ``fresh_period``) holds
each client's own discriminator at the start of a round, so that generator
and discriminator updates start from the same state.

All values travel in level-normalised units: every feature is divided by its
mean over the city's sensors and time.  Metrics are reported in raw units.
"""

from __future__ import annotations

import hashlib
import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .checkpoint import dump_blocks, parse_blocks
from .data import DataError, TrafficSeries, make_windows, stack_windows
from .graph import RoadNetwork
from .nn import MLP, OptimizerConfig
from .predictor import Evaluation, evaluate, fit, make_predictor
from .tda import (DiscriminatorParams, FitConfig, GeneratorObjective, GeneratorParams, TransformBundle,
                  adversarial_optimizer, domain_statistics, fit_transforms, generate, mixed_batch,
                  train_step_discriminator, train_step_generator)
from .transport import Transport, make_transport
from .tst import (CipherBox, ProtocolError, SecretClient, SecretServer, Transcript, decode_fixed,
                  encode_fixed)
from .wire import BROADCAST, Kind, Message, encode

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Freeze caches
# ---------------------------------------------------------------------------

class FreezeMiss(LookupError):
    pass


@dataclass
class FreezeCache:
    """Slots refreshed at most once every ``period`` rounds.

    ``put`` is accepted on a slot's first store and whenever ``round`` is at
    least ``period`` rounds past the last accepted store; otherwise the value
    is dropped and the slot stays stale.  ``get`` returns the value stored at
    the most recent accepted round not after ``round``.
    """

    period: int = 1
    _history: dict[str, list[tuple[int, object]]] = field(default_factory=dict)

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("freeze period must be at least 1")

    def due(self, slot: str, round: int) -> bool:
        hist = self._history.get(slot)
        return not hist or round >= hist[-1][0] + self.period

    def put(self, slot: str, round: int, value) -> bool:
        if not self.due(slot, round):
            return False
        self._history.setdefault(slot, []).append((round, value))
        return True

    def get(self, slot: str, round: int):
        for stored_at, value in reversed(self._history.get(slot, [])):
            if stored_at <= round:
                return value
        raise FreezeMiss(f"no value frozen in slot {slot!r} at or before round {round}")


def freeze_put(cache: FreezeCache, slot: str, round: int, value) -> bool:
    return cache.put(slot, round, value)


def freeze_get(cache: FreezeCache, slot: str, round: int):
    return cache.get(slot, round)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClientData:
    series: TrafficSeries
    network: RoadNetwork


@dataclass(frozen=True)
class TargetData:
    train: TrafficSeries
    test: TrafficSeries
    network: RoadNetwork


@dataclass
class FederationConfig:
    clients: list[ClientData]
    target: TargetData
    rounds: int = 100
    batches: int = 1
    batch_frames: int = 32
    lambda1: float = 0.7
    lambda2: float = 0.4
    hidden: int = 32
    gen_opt: OptimizerConfig = field(default_factory=adversarial_optimizer)
    dis_opt: OptimizerConfig = field(default_factory=adversarial_optimizer)
    predictor: str = "ar"
    predictor_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", 1e-3, 200))
    ridge: float = 1.0
    history: int = 12
    horizon: int = 3
    freeze_period: int = 5
    fresh_period: int = 1
    transport: str = "inproc"
    deterministic: bool = True
    seed: int = 0
    timeout: float = 120.0
    fit: FitConfig = field(default_factory=FitConfig)

    def validate(self) -> "FederationConfig":
        if not self.clients:
            raise ValueError("a federation needs at least one client")
        if self.rounds < 0 or self.batches < 1 or self.batch_frames < 1:
            raise ValueError("rounds must be >= 0; batches and batch_frames >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be non-negative")
        if self.freeze_period < 1 or self.fresh_period < 1:
            raise ValueError("freeze periods must be >= 1")
        if self.transport not in ("inproc", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        feats = {c.series.feature_count for c in self.clients} | {self.target.train.feature_count}
        if len(feats) != 1:
            raise DataError(f"cities disagree on the feature count: {sorted(feats)}")
        for i, c in enumerate(self.clients):
            if not c.series.availability.all():
                raise DataError(f"client {i} data has missing readings; impute first")
            if len(c.series) < self.batch_frames:
                raise DataError(f"client {i} has {len(c.series)} frames, fewer than batch_frames")
            if c.network.sensor_count != c.series.sensor_count:
                raise DataError(f"client {i} network and readings disagree on sensor count")
        t = self.target
        if t.network.sensor_count != t.train.sensor_count:
            raise DataError("target network and readings disagree on sensor count")
        if len(t.train) < self.history + self.horizon:
            raise DataError("target training split is shorter than one prediction window")
        return self

    @property
    def chunk_count(self) -> int:
        """Distinct source chunks; every client cycles through the same indices."""
        return min(len(c.series) // self.batch_frames for c in self.clients)

    def chunk_index(self, round: int, batch: int) -> int:
        return (round * self.batches + batch) % self.chunk_count


# ---------------------------------------------------------------------------
# Party state
# ---------------------------------------------------------------------------

def level_of(values: np.ndarray, available: np.ndarray | None = None) -> np.ndarray:
    """Per-feature mean over time and sensors, over available readings only."""
    v = np.asarray(values, dtype=float)
    lv = v[available].mean(axis=0) if available is not None else v.mean(axis=(0, 1))
    return np.where(np.abs(lv) > 0, lv, 1.0)


@dataclass
class TargetDomain:
    """What the server publishes about the target city before training."""

    level: np.ndarray
    prototype: np.ndarray
    spread: np.ndarray
    adjacency: np.ndarray


def describe_target(train: TrafficSeries, network: RoadNetwork) -> TargetDomain:
    level = level_of(train.values, train.availability)
    proto, spread = domain_statistics(train.values / level)
    return TargetDomain(level, proto, spread, network.adjacency)


@dataclass
class ClientState:
    id: int
    frames: np.ndarray  # level-normalised, (L, R, F)
    tb: TransformBundle
    gen: GeneratorParams
    dis: DiscriminatorParams
    g_opt: object
    d_opt: object
    secret: SecretClient
    domain: TargetDomain
    fr: FreezeCache
    fr_fresh: FreezeCache
    losses: list[dict] = field(default_factory=list)

    def chunk(self, index: int, size: int) -> np.ndarray:
        return self.frames[index * size:(index + 1) * size]


@dataclass
class ServerState:
    n: int
    dis: DiscriminatorParams
    d_opt: object
    secret: SecretServer
    domain: TargetDomain
    local: np.ndarray  # normalised target training frames
    local_windows: tuple
    predictor: object
    fr: FreezeCache
    aggregated: dict[int, np.ndarray] = field(default_factory=dict)
    losses: list[dict] = field(default_factory=list)


def _init_parties(cfg: FederationConfig, box: CipherBox):
    n = len(cfg.clients)
    train = cfg.target.train
    dom = describe_target(train, cfg.target.network)
    f = train.feature_count
    clients = []
    for i, c in enumerate(cfg.clients):
        x = c.series.values / level_of(c.series.values)
        tb = fit_transforms(c.network.adjacency, dom.adjacency, x.mean(axis=0), dom.prototype, cfg.fit)
        seed = [cfg.seed, 1, i]
        gen = GeneratorParams.create(c.series.sensor_count, train.sensor_count, f, cfg.hidden,
                                     np.random.SeedSequence(seed).generate_state(1)[0], *domain_statistics(x))
        dis = DiscriminatorParams.create(train.sensor_count, f, cfg.hidden,
                                         np.random.SeedSequence(seed + [1]).generate_state(1)[0],
                                         dom.prototype, dom.spread)
        clients.append(ClientState(i, x, tb, gen, dis, cfg.gen_opt.make(), cfg.dis_opt.make(),
                                   SecretClient(i, n, box), dom, FreezeCache(cfg.freeze_period),
                                   FreezeCache(cfg.fresh_period)))
    local = train.values / dom.level
    windows = stack_windows(make_windows(TrafficSeries(local, train.availability), cfg.history, cfg.horizon))
    sdis = DiscriminatorParams.create(train.sensor_count, f, cfg.hidden,
                                      np.random.SeedSequence([cfg.seed, 2]).generate_state(1)[0],
                                      dom.prototype, dom.spread)
    server = ServerState(n, sdis, cfg.dis_opt.make(), SecretServer(n, deterministic=cfg.deterministic), dom,
                         local, windows, make_predictor(cfg.predictor, train.sensor_count, f, cfg.history,
                                                        cfg.horizon),
                         FreezeCache(cfg.freeze_period))
    return clients, server


# ---------------------------------------------------------------------------
# Discriminator snapshots on the wire
# ---------------------------------------------------------------------------

def pack_discriminator(d: DiscriminatorParams) -> bytes:
    return dump_blocks(b"DIS1", [np.array([len(d.net.weights)]), *d.net.blocks(), d.center, d.scale])


def unpack_discriminator(blob: bytes) -> DiscriminatorParams:
    blocks = parse_blocks(blob, b"DIS1")
    k = int(blocks[0][0])
    net = MLP(list(blocks[1:1 + 2 * k:2]), list(blocks[2:2 + 2 * k:2]))
    return DiscriminatorParams(net, blocks[1 + 2 * k], blocks[2 + 2 * k])


# ---------------------------------------------------------------------------
# Links: blocking receive with timeout and abort
# ---------------------------------------------------------------------------

class FederationError(RuntimeError):
    def __init__(self, party: str, round: int, phase: str, cause: BaseException):
        super().__init__(f"{party} failed in round {round} during {phase}: {cause}")
        self.party, self.round, self.phase, self.cause = party, round, phase, cause


class _Aborted(Exception):
    pass


def _wait(get: Callable[[float], Message], abort: threading.Event, timeout: float, what: str) -> Message:
    deadline = time.monotonic() + timeout
    while True:
        if abort.is_set():
            raise _Aborted()
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ProtocolError(f"timed out waiting for {what}")
        try:
            return get(min(0.05, remaining))
        except queue.Empty:
            continue


@dataclass
class ClientLink:
    transport: Transport
    client: int
    abort: threading.Event
    timeout: float

    def send(self, msg: Message) -> None:
        self.transport.client_send(self.client, msg)

    def recv(self, what: str) -> Message:
        return _wait(lambda t: self.transport.client_recv(self.client, t), self.abort, self.timeout, what)


@dataclass
class ServerLink:
    transport: Transport
    abort: threading.Event
    timeout: float
    pending: list[Message] = field(default_factory=list)

    def collect(self, n: int, round: int, kinds: tuple[Kind, ...], batch: int) -> list[Message]:
        """Block until one ``kinds`` message per client for ``round`` has arrived."""
        got: dict[int, Message] = {}
        order: list[Message] = []

        def take(m: Message) -> bool:
            if m.round == round and m.kind in kinds:
                if m.client in got:
                    raise ProtocolError(f"round {round} batch {batch}: duplicate message from client {m.client}")
                got[m.client] = m
                order.append(m)
                return True
            return False

        self.pending = [m for m in self.pending if not take(m)]
        deadline = time.monotonic() + self.timeout
        while len(got) < n:
            try:
                m = _wait(self.transport.server_recv, self.abort, max(deadline - time.monotonic(), 0.0), "")
            except ProtocolError:
                missing = sorted(set(range(n)) - set(got))
                raise ProtocolError(f"round {round} batch {batch}: missing message from client(s) {missing}") from None
            if not take(m):
                self.pending.append(m)
        return order


# ---------------------------------------------------------------------------
# Rounds
# ---------------------------------------------------------------------------

def client_round(state: ClientState, round: int, link: ClientLink, cfg: FederationConfig) -> None:
    """One round for one client: per batch transform, train, share, absorb the aggregate."""
    state.g_opt.progress = state.d_opt.progress = round / max(cfg.rounds, 1)
    if round % cfg.freeze_period == 0:
        msg = link.recv(f"server discriminator snapshot for round {round}")
        if msg.kind != Kind.DIS or msg.round != round:
            raise ProtocolError(f"client {state.id}: expected DIS for round {round}, got {msg.kind.name} "
                                f"for round {msg.round}")
        state.fr.put("server_dis", round, unpack_discriminator(msg.payload))
    state.fr_fresh.put("client_dis", round, state.dis.copy())
    g_losses, d_losses = [], []
    for b in range(cfg.batches):
        src = state.chunk(cfg.chunk_index(round, b), cfg.batch_frames)
        x = generate(src, state.gen, state.tb)
        try:
            exemplar = state.fr.get(f"aggregate/{b}", round)
        except FreezeMiss:
            exemplar = None
        d_server = state.fr.get("server_dis", round)
        d_client = state.fr_fresh.get("client_dis", round) if exemplar is not None else None
        obj = GeneratorObjective(state.tb, src, state.domain.prototype, d_server, d_client, None, exemplar,
                                 cfg.lambda1, cfg.lambda2)
        if exemplar is not None:
            d_losses.append(train_step_discriminator(state.dis, *mixed_batch(x, exemplar), state.d_opt))
        g_losses.append(train_step_generator(state.gen, obj, state.g_opt))

        link.send(state.secret.outgoing(x, round, b))
        reply = link.recv(f"aggregate for round {round} batch {b}")
        agg = state.secret.incoming(reply, b)
        if round == 0 and state.id == 0:
            link.send(state.secret.report(round, b))
        state.fr.put(f"aggregate/{b}", round, agg)
    state.losses.append({"generator": float(np.mean(g_losses)),
                         "client_dis": float(np.mean(d_losses)) if d_losses else 0.0})


def _train_predictor(server: ServerState, round: int, cfg: FederationConfig, final: bool) -> float:
    """Fit on the local windows plus windows cut from every frozen aggregated chunk.

    Intermediate rounds only refresh the closed-form start; the last round
    also runs the configured descent.
    """
    frozen = server.fr.get("aggregated", round)
    parts = [server.local_windows]
    for c in sorted(frozen):
        frames = frozen[c]
        if len(frames) >= cfg.history + cfg.horizon:
            parts.append(stack_windows(make_windows(TrafficSeries(frames, np.ones(frames.shape[:2], bool)),
                                                    cfg.history, cfg.horizon)))
    data = tuple(np.concatenate([p[k] for p in parts]) for k in range(3))
    model = server.predictor
    if final:
        fit(model, data, cfg.predictor_opt, ridge=cfg.ridge)
    elif hasattr(model, "ridge_fit"):
        model.ridge_fit(*data, cfg.ridge)
    return float(model.loss_and_grad(*data)[0])


def server_round(state: ServerState, round: int, link: ServerLink, cfg: FederationConfig,
                 transport: Transport) -> None:
    state.d_opt.progress = round / max(cfg.rounds, 1)
    if round % cfg.freeze_period == 0:
        snap = Message.opaque(Kind.DIS, round, BROADCAST, pack_discriminator(state.dis))
        state.secret.transcript.record("out", snap)
        transport.broadcast(snap)
    d_losses = []
    for b in range(cfg.batches):
        if round == 0:
            inbox = link.collect(state.n, round, (Kind.CIPHER0,), b)
            transport.broadcast(state.secret.combine(inbox, round, b))
            report = link.collect(1, round, (Kind.AGG,), b)[0]
            if report.client != 0:
                raise ProtocolError(f"bootstrap report must come from client 0, got client {report.client}")
            agg = state.secret.accept_report(report, b)
        else:
            inbox = link.collect(state.n, round, (Kind.MASK,), b)
            out = state.secret.unmask(inbox, round, b)
            transport.broadcast(out)
            agg = out.values
        agg = np.asarray(agg).reshape(cfg.batch_frames, *state.local.shape[1:])
        state.aggregated[cfg.chunk_index(round, b)] = agg
        state.fr.put(f"aggregate/{b}", round, agg)
        frozen = state.fr.get(f"aggregate/{b}", round)
        d_losses.append(train_step_discriminator(state.dis, *mixed_batch(frozen, state.local), state.d_opt))
    state.fr.put("aggregated", round, dict(state.aggregated))
    p_loss = _train_predictor(state, round, cfg, final=(round == cfg.rounds - 1))
    state.losses.append({"server_dis": float(np.mean(d_losses)), "predictor": p_loss})


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    clients: int
    rounds: int
    batches: int
    degenerate: bool
    losses: list[dict]
    metrics: Evaluation
    messages: dict[str, int]
    bytes_total: int
    aggregate_checksum: str
    timings: dict[str, float] = field(default_factory=dict)

    def as_dict(self, timings: bool = True) -> dict:
        out = {
            "clients": self.clients, "rounds": self.rounds, "batches": self.batches,
            "degenerate": self.degenerate,
            "losses": self.losses,
            "metrics": {k: getattr(self.metrics, k).tolist() for k in ("mae", "rmse", "mae_final", "rmse_final")},
            "messages": dict(sorted(self.messages.items())),
            "bytes_total": self.bytes_total,
            "aggregate_checksum": self.aggregate_checksum,
        }
        if timings:
            out["timings"] = self.timings
        return out

    def to_text(self, timings: bool = True, features=("flow", "speed", "occupancy")) -> str:
        lines = [f"clients = {self.clients}", f"rounds = {self.rounds}", f"batches = {self.batches}",
                 f"degenerate = {str(self.degenerate).lower()}"]
        for key in ("mae", "rmse", "mae_final", "rmse_final"):
            for name, v in zip(features, getattr(self.metrics, key)):
                lines.append(f"test.{key}.{name} = {float(v)!r}")
        for r, row in enumerate(self.losses):
            for k, v in row.items():
                lines.append(f"round.{r}.{k} = {v!r}")
        for k, v in sorted(self.messages.items()):
            lines.append(f"messages.{k} = {v}")
        lines.append(f"bytes_total = {self.bytes_total}")
        lines.append(f"aggregate_checksum = {self.aggregate_checksum}")
        if timings:
            for k, v in self.timings.items():
                lines.append(f"time.{k} = {v:.3f}")
        return "\n".join(lines) + "\n"

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.as_dict(timings), indent=2, sort_keys=True) + "\n"


def aggregate_checksum(transcript: Transcript) -> str:
    """sha256 over the encoded aggregate broadcasts, in order."""
    h = hashlib.sha256()
    for m in transcript.aggregates():
        h.update(encode(m))
    return h.hexdigest()


@dataclass
class FederationRun:
    report: RunReport
    transcript: Transcript
    predictor: object
    clients: list[ClientState]
    server: ServerState


def _merge_losses(clients: list[ClientState], server: ServerState) -> list[dict]:
    rows = []
    for r, srow in enumerate(server.losses):
        crows = [c.losses[r] for c in sorted(clients, key=lambda c: c.id)]
        rows.append({"generator": float(np.mean([c["generator"] for c in crows])),
                     "client_dis": float(np.mean([c["client_dis"] for c in crows])),
                     **srow})
    return rows


def _evaluate_target(predictor, cfg: FederationConfig, level: np.ndarray) -> Evaluation:
    windows = make_windows(cfg.target.test, cfg.history, cfg.horizon)
    return evaluate(predictor, windows, level)


def run_federation(cfg: FederationConfig, key: bytes | None = None) -> FederationRun:
    """Run ``cfg.rounds`` rounds with one thread per client and one for the server."""
    cfg.validate()
    t0 = time.perf_counter()
    box = CipherBox(key if key is not None else np.random.default_rng([cfg.seed, 99]).bytes(32))
    clients, server = _init_parties(cfg, box)
    t_setup = time.perf_counter() - t0
    abort = threading.Event()
    errors: list[FederationError] = []
    lock = threading.Lock()

    def guard(party: str, body, progress: dict):
        def run():
            try:
                body()
            except _Aborted:
                pass
            except BaseException as exc:  # surfaced by the coordinator
                with lock:
                    errors.append(FederationError(party, progress.get("round", -1), progress.get("phase", "setup"),
                                                  exc))
                abort.set()
        return run

    t1 = time.perf_counter()
    with make_transport(cfg.transport, len(clients)) as transport:
        threads = []
        for c in clients:
            prog: dict = {}
            link = ClientLink(transport, c.id, abort, cfg.timeout)

            def body(c=c, link=link, prog=prog):
                for r in range(cfg.rounds):
                    prog.update(round=r, phase="client round")
                    client_round(c, r, link, cfg)
            threads.append(threading.Thread(target=guard(f"client {c.id}", body, prog), name=f"client-{c.id}"))
        sprog: dict = {}
        slink = ServerLink(transport, abort, cfg.timeout)

        def server_body():
            for r in range(cfg.rounds):
                sprog.update(round=r, phase="server round")
                server_round(server, r, slink, cfg, transport)
        threads.append(threading.Thread(target=guard("server", server_body, sprog), name="server"))
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        raise errors[0]
    t_rounds = time.perf_counter() - t1
    if cfg.rounds == 0:
        server.fr.put("aggregated", 0, {})
        _train_predictor(server, 0, cfg, final=True)
    t2 = time.perf_counter()
    metrics = _evaluate_target(server.predictor, cfg, server.domain.level)
    tr = server.secret.transcript
    report = RunReport(len(clients), cfg.rounds, cfg.batches, len(clients) == 1, _merge_losses(clients, server),
                       metrics, tr.counts(), tr.total_bytes(), aggregate_checksum(tr),
                       {"setup": t_setup, "rounds": t_rounds, "evaluate": time.perf_counter() - t2})
    if report.degenerate:
        log.warning("single-client federation: the aggregate is that client's own transformed data")
    return FederationRun(report, tr, server.predictor, clients, server)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def sequential_reference(cfg: FederationConfig, key: bytes | None = None) -> list[dict]:
    """Straight-line run without threads, transport, caches or masking.

    Only defined for one batch per round and both freeze periods equal to 1;
    the aggregate is the direct mean (round 0 through the same fixed-point
    encoding the bootstrap uses).  Returns the per-round losses.
    """
    if cfg.batches != 1 or cfg.freeze_period != 1 or cfg.fresh_period != 1:
        raise ValueError("the sequential reference needs one batch per round and freeze periods of 1")
    cfg.validate()
    box = CipherBox(key if key is not None else np.random.default_rng([cfg.seed, 99]).bytes(32))
    clients, server = _init_parties(cfg, box)
    n = len(clients)
    prev_agg = None
    rows = []
    for r in range(cfg.rounds):
        snapshot = server.dis.copy()
        xs, g_losses, d_losses = [], [], []
        for c in clients:
            c.g_opt.progress = c.d_opt.progress = r / max(cfg.rounds, 1)
            src = c.chunk(cfg.chunk_index(r, 0), cfg.batch_frames)
            x = generate(src, c.gen, c.tb)
            start_dis = c.dis.copy()
            obj = GeneratorObjective(c.tb, src, c.domain.prototype, snapshot,
                                     start_dis if prev_agg is not None else None, None, prev_agg,
                                     cfg.lambda1, cfg.lambda2)
            if prev_agg is not None:
                d_losses.append(train_step_discriminator(c.dis, *mixed_batch(x, prev_agg), c.d_opt))
            g_losses.append(train_step_generator(c.gen, obj, c.g_opt))
            xs.append(x)
        if r == 0:
            q = [decode_fixed(encode_fixed(x.ravel(), box.bits), box.bits).reshape(x.shape) for x in xs]
            agg = sum(q[1:], q[0]) / n
        else:
            agg = sum(xs[1:], xs[0]) / n
        prev_agg = agg
        server.d_opt.progress = r / max(cfg.rounds, 1)
        s_loss = train_step_discriminator(server.dis, *mixed_batch(agg, server.local), server.d_opt)
        server.aggregated[cfg.chunk_index(r, 0)] = agg
        server.fr.put("aggregated", r, dict(server.aggregated))
        p_loss = _train_predictor(server, r, cfg, final=(r == cfg.rounds - 1))
        rows.append({"generator": float(np.mean(g_losses)),
                     "client_dis": float(np.mean(d_losses)) if d_losses else 0.0,
                     "server_dis": s_loss, "predictor": p_loss})
    return rows


def no_transfer_baseline(cfg: FederationConfig) -> tuple[object, Evaluation]:
    """Predictor trained on the target's local windows only, same settings."""
    cfg.validate()
    train = cfg.target.train
    level = level_of(train.values, train.availability)
    windows = stack_windows(make_windows(TrafficSeries(train.values / level, train.availability),
                                         cfg.history, cfg.horizon))
    model = make_predictor(cfg.predictor, train.sensor_count, train.feature_count, cfg.history, cfg.horizon)
    fit(model, windows, cfg.predictor_opt, ridge=cfg.ridge)
    return model, _evaluate_target(model, cfg, level)
