"""Traffic secret transmission: delta-masked aggregation with an encrypted bootstrap.

Round 0 travels under an additively homomorphic mock cipher: the server adds
ciphertexts without being able to read them and the clients decrypt the sum.
From then on each client sends ``previous aggregate + (x_now - x_prev) / n``;
the server recovers the new mean as ``sum(masks) - (n - 1) * previous aggregate``.

The server learns the sequence of aggregates and each client's scaled
round-over-round delta.  It cannot tell apart federations whose clients'
data differ by constant offsets that cancel across clients.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .wire import BROADCAST, Kind, Message, WireError, decode, encode

SCALE_BITS = 40  # quantisation step 2**-40 per entry
MAX_WORD = 2.0 ** 58  # leaves headroom for sums of up to 32 ciphertexts


class ProtocolError(RuntimeError):
    pass


class DecryptionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Mock additively homomorphic cipher
# ---------------------------------------------------------------------------

def _prf(key: bytes, *parts, size: int) -> np.ndarray:
    h = hashlib.blake2b(key=key[:64], digest_size=32)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    seed = int.from_bytes(h.digest(), "little")
    return np.random.default_rng(seed).integers(0, 2**64, size=size, dtype=np.uint64, endpoint=False)


def encode_fixed(values: np.ndarray, bits: int = SCALE_BITS) -> np.ndarray:
    q = np.rint(np.asarray(values, dtype=float) * (1 << bits))
    if not np.all(np.abs(q) < MAX_WORD):
        raise OverflowError("value too large for fixed-point encoding")
    return q.astype(np.int64).view(np.uint64)


def decode_fixed(words: np.ndarray, bits: int = SCALE_BITS) -> np.ndarray:
    return words.view(np.int64).astype(float) / (1 << bits)


@dataclass(frozen=True)
class Ciphertext:
    shape: tuple[int, ...]
    nonce: int
    contributors: tuple[int, ...]
    body: np.ndarray  # uint64 words
    tag: int

    _HEAD = struct.Struct("<4sQQI")

    def to_bytes(self) -> bytes:
        head = self._HEAD.pack(b"CTX1", self.nonce, self.tag, len(self.shape))
        dims = struct.pack(f"<{len(self.shape)}I", *self.shape)
        who = struct.pack(f"<I{len(self.contributors)}I", len(self.contributors), *self.contributors)
        return head + dims + who + self.body.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Ciphertext":
        try:
            magic, nonce, tag, ndim = cls._HEAD.unpack_from(buf)
            if magic != b"CTX1":
                raise DecryptionError("not a ciphertext")
            pos = cls._HEAD.size
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            (k,) = struct.unpack_from("<I", buf, pos)
            contributors = struct.unpack_from(f"<{k}I", buf, pos + 4)
            pos += 4 + 4 * k
            body = np.frombuffer(buf[pos:], dtype="<u8").astype(np.uint64)
        except struct.error as exc:
            raise DecryptionError(f"malformed ciphertext: {exc}") from None
        if body.size != int(np.prod(shape)):
            raise DecryptionError("ciphertext body does not match its dimension header")
        return cls(tuple(shape), nonce, tuple(contributors), body, tag)


class CipherBox:
    """Key holder for the mock cipher; clients share one box, the server has none.

    ``Enc_i(x) = fixed(x) + pad_i`` word by word (mod 2**64), where the pads come
    from a keyed PRF of (nonce, client).  Adding ciphertexts adds plaintexts and
    pads; decryption removes the pads of every listed contributor.  A linear
    tag keyed by the same secret rejects wrong keys and corrupted bodies.
    """

    def __init__(self, key: bytes | None = None, bits: int = SCALE_BITS):
        self.key = key if key is not None else os.urandom(32)
        self.bits = bits

    def _mac_key(self, nonce: int, size: int) -> np.ndarray:
        return _prf(self.key, "mac", nonce, size=size) | np.uint64(1)

    def _tag(self, nonce: int, body: np.ndarray, contributors: Iterable[int]) -> int:
        with np.errstate(over="ignore"):
            acc = np.sum(self._mac_key(nonce, body.size) * body, dtype=np.uint64)
            for c in contributors:
                acc = acc + _prf(self.key, "tag", nonce, c, size=1)[0]
        return int(acc)

    def _pads(self, nonce: int, contributors: Iterable[int], size: int) -> np.ndarray:
        total = np.zeros(size, dtype=np.uint64)
        with np.errstate(over="ignore"):
            for c in contributors:
                total = total + _prf(self.key, "pad", nonce, c, size=size)
        return total

    def encrypt(self, values: np.ndarray, client: int, nonce: int = 0) -> Ciphertext:
        v = np.asarray(values, dtype=float)
        words = encode_fixed(v.ravel(), self.bits)
        with np.errstate(over="ignore"):
            body = words + self._pads(nonce, [client], words.size)
        return Ciphertext(v.shape, nonce, (client,), body, self._tag(nonce, body, [client]))

    def decrypt(self, ct: Ciphertext) -> np.ndarray:
        if self._tag(ct.nonce, ct.body, ct.contributors) != ct.tag:
            raise DecryptionError("authentication failed: wrong key or corrupted ciphertext")
        with np.errstate(over="ignore"):
            words = ct.body - self._pads(ct.nonce, ct.contributors, ct.body.size)
        return decode_fixed(words, self.bits).reshape(ct.shape)


def encrypt_frame(values: np.ndarray, box: CipherBox, client: int, nonce: int = 0) -> Ciphertext:
    return box.encrypt(values, client, nonce)


def decrypt_frame(ct: Ciphertext, box: CipherBox) -> np.ndarray:
    return box.decrypt(ct)


def combine_ciphertexts(cts: Sequence[Ciphertext]) -> Ciphertext:
    """Homomorphic sum; needs no key."""
    if not cts:
        raise ProtocolError("nothing to combine")
    first = cts[0]
    who: list[int] = []
    body = np.zeros_like(first.body)
    tag = 0
    for ct in cts:
        if ct.shape != first.shape or ct.nonce != first.nonce:
            raise ProtocolError("ciphertexts disagree on shape or nonce")
        who += ct.contributors
        with np.errstate(over="ignore"):
            body = body + ct.body
        tag = (tag + ct.tag) % 2**64
    if len(set(who)) != len(who):
        raise ProtocolError("a contributor appears twice in the combination")
    return Ciphertext(first.shape, first.nonce, tuple(sorted(who)), body, tag)


# ---------------------------------------------------------------------------
# Masking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskFrame:
    round: int
    client: int
    values: np.ndarray


@dataclass(frozen=True)
class AggregateFrame:
    round: int
    values: np.ndarray


def mask_frame(prev_agg: AggregateFrame | np.ndarray, x_now: np.ndarray, x_prev: np.ndarray, n: int,
               round: int | None = None, client: int = 0) -> MaskFrame:
    """``prev_agg + (x_now - x_prev) / n``."""
    prev = prev_agg.values if isinstance(prev_agg, AggregateFrame) else np.asarray(prev_agg, float)
    x_now, x_prev = np.asarray(x_now, float), np.asarray(x_prev, float)
    if not (prev.shape == x_now.shape == x_prev.shape):
        raise ValueError(f"shape mismatch: {prev.shape}, {x_now.shape}, {x_prev.shape}")
    if n < 1:
        raise ValueError("client count must be positive")
    if round is None:
        round = prev_agg.round + 1 if isinstance(prev_agg, AggregateFrame) else 1
    if round < 1:
        raise ValueError("masked rounds start at 1")
    return MaskFrame(round, client, prev + (x_now - x_prev) / n)


def unmask_aggregate(masks: Sequence[MaskFrame], prev_agg: AggregateFrame | np.ndarray, n: int) -> AggregateFrame:
    """``sum(masks) - (n - 1) * prev_agg``; requires exactly one mask per client."""
    if len(masks) != n:
        raise ProtocolError(f"expected {n} masks, got {len(masks)}")
    ids = [m.client for m in masks]
    if len(set(ids)) != n:
        raise ProtocolError(f"duplicate client masks: {sorted(ids)}")
    rounds = {m.round for m in masks}
    if len(rounds) != 1:
        raise ProtocolError(f"masks from different rounds: {sorted(rounds)}")
    prev = prev_agg.values if isinstance(prev_agg, AggregateFrame) else np.asarray(prev_agg, float)
    total = np.zeros_like(prev)
    for m in sorted(masks, key=lambda m: m.client):
        total = total + m.values
    return AggregateFrame(rounds.pop(), total - (n - 1) * prev)


# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Entry:
    direction: str  # "in" (server receives) or "out" (server emits)
    batch: int
    message: Message


@dataclass
class Transcript:
    """Append-only log of everything the server receives and emits."""

    entries: list[Entry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, direction: str, message: Message, batch: int = 0) -> None:
        if direction not in ("in", "out"):
            raise ValueError(direction)
        with self._lock:
            self.entries.append(Entry(direction, batch, message))

    def __len__(self) -> int:
        return len(self.entries)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            key = f"{e.direction}_{e.message.kind.name}"
            out[key] = out.get(key, 0) + 1
        return out

    def total_bytes(self) -> int:
        return sum(len(encode(e.message)) for e in self.entries)

    def aggregates(self) -> list[Message]:
        return [e.message for e in self.entries if e.direction == "out" and e.message.kind == Kind.AGG]


_TRANSCRIPT_MAGIC = b"FTR1"
_RECORD = struct.Struct("<BII")


def dump_transcript(transcript: Transcript) -> bytes:
    """``FTR1`` then per entry: u8 direction (0 in, 1 out), u32 batch, u32 length, encoded message."""
    parts = [_TRANSCRIPT_MAGIC]
    for e in transcript.entries:
        body = encode(e.message)
        parts += [_RECORD.pack(e.direction == "out", e.batch, len(body)), body]
    return b"".join(parts)


def load_transcript(buf: bytes) -> Transcript:
    if buf[:4] != _TRANSCRIPT_MAGIC:
        raise WireError(f"not a transcript (magic {buf[:4]!r})")
    out = Transcript()
    pos = 4
    while pos < len(buf):
        if pos + _RECORD.size > len(buf):
            raise WireError("truncated transcript record")
        direction, batch, n = _RECORD.unpack_from(buf, pos)
        pos += _RECORD.size
        if direction > 1 or pos + n > len(buf):
            raise WireError("corrupt transcript record")
        out.record("out" if direction else "in", decode(buf[pos:pos + n]), batch)
        pos += n
    return out


def server_view(transcript: Transcript) -> list[np.ndarray]:
    """Every plaintext array the server sees, in order: masks, reported and emitted aggregates."""
    view = []
    for e in transcript.entries:
        if e.message.kind in (Kind.MASK, Kind.AGG):
            view.append(e.message.values)
    return view


# ---------------------------------------------------------------------------
# Protocol parties
# ---------------------------------------------------------------------------

def exchange_nonce(round: int, batch: int) -> int:
    return (round << 20) | batch


def _shape3(x) -> tuple[int, int, int]:
    s = np.shape(x)
    s = (1,) * (3 - len(s)) + tuple(s)
    return tuple(int(v) for v in s[-3:])


@dataclass
class SecretClient:
    """Client side of the protocol; one delta chain per batch index."""

    client: int
    n: int
    box: CipherBox
    prev_x: dict[int, np.ndarray] = field(default_factory=dict)
    prev_agg: dict[int, np.ndarray] = field(default_factory=dict)

    def outgoing(self, x: np.ndarray, round: int, batch: int = 0) -> Message:
        x = np.asarray(x, dtype=float)
        if round == 0:
            ct = self.box.encrypt(x, self.client, exchange_nonce(round, batch))
            msg = Message.opaque(Kind.CIPHER0, round, self.client, ct.to_bytes(), _shape3(x))
            # the value actually contributed is the fixed-point one
            self.prev_x[batch] = decode_fixed(encode_fixed(x.ravel(), self.box.bits), self.box.bits).reshape(x.shape)
            return msg
        if batch not in self.prev_agg:
            raise ProtocolError(f"client {self.client}: no previous aggregate for batch {batch} "
                                f"before round {round}")
        m = mask_frame(self.prev_agg[batch], x, self.prev_x[batch], self.n, round, self.client)
        self.prev_x[batch] = x
        return Message.array(Kind.MASK, round, self.client, m.values)

    def incoming(self, msg: Message, batch: int = 0) -> np.ndarray:
        """Absorb the server broadcast and return the aggregate it carries."""
        shape = self.prev_x[batch].shape
        if msg.kind == Kind.CIPHER0:
            agg = self.box.decrypt(Ciphertext.from_bytes(msg.payload)) / self.n
        elif msg.kind == Kind.AGG:
            agg = msg.values
        else:
            raise ProtocolError(f"unexpected broadcast {msg.kind.name}")
        agg = np.asarray(agg, dtype=float).reshape(shape)
        self.prev_agg[batch] = agg
        return agg

    def report(self, round: int, batch: int = 0) -> Message:
        """Plaintext report of the decrypted bootstrap aggregate (sent by one client)."""
        return Message.array(Kind.AGG, round, self.client, self.prev_agg[batch])


@dataclass
class SecretServer:
    """Server side: combines bootstrap ciphertexts, then unmasks each exchange."""

    n: int
    transcript: Transcript = field(default_factory=Transcript)
    prev_agg: dict[int, np.ndarray] = field(default_factory=dict)
    deterministic: bool = True

    def _check_inbox(self, inbox: Sequence[Message], round: int) -> list[Message]:
        ids = [m.client for m in inbox]
        missing = sorted(set(range(self.n)) - set(ids))
        if missing:
            raise ProtocolError(f"round {round}: missing message from client(s) {missing}")
        if len(ids) != self.n or len(set(ids)) != len(ids):
            raise ProtocolError(f"round {round}: expected one message per client, got clients {sorted(ids)}")
        bad = [m.client for m in inbox if m.round != round]
        if bad:
            raise ProtocolError(f"round {round}: stale or future message from client(s) {sorted(bad)}")
        return sorted(inbox, key=lambda m: m.client) if self.deterministic else list(inbox)

    def combine(self, inbox: Sequence[Message], round: int, batch: int = 0) -> Message:
        inbox = self._check_inbox(inbox, round)
        for m in inbox:
            if m.kind != Kind.CIPHER0:
                raise ProtocolError(f"round {round}: expected ciphertexts, got {m.kind.name}")
            self.transcript.record("in", m, batch)
        combined = combine_ciphertexts([Ciphertext.from_bytes(m.payload) for m in inbox])
        out = Message.opaque(Kind.CIPHER0, round, BROADCAST, combined.to_bytes(), inbox[0].shape)
        self.transcript.record("out", out, batch)
        return out

    def accept_report(self, msg: Message, batch: int = 0) -> np.ndarray:
        if msg.kind != Kind.AGG:
            raise ProtocolError(f"expected the bootstrap aggregate report, got {msg.kind.name}")
        self.transcript.record("in", msg, batch)
        self.prev_agg[batch] = msg.values
        return msg.values

    def unmask(self, inbox: Sequence[Message], round: int, batch: int = 0) -> Message:
        inbox = self._check_inbox(inbox, round)
        if batch not in self.prev_agg:
            raise ProtocolError(f"round {round}: no previous aggregate for batch {batch}")
        masks = []
        for m in inbox:
            if m.kind != Kind.MASK:
                raise ProtocolError(f"round {round}: expected masks, got {m.kind.name}")
            self.transcript.record("in", m, batch)
            masks.append(MaskFrame(m.round, m.client, m.values))
        total = np.zeros_like(self.prev_agg[batch])
        for m in masks:  # reduction order = inbox order
            total = total + m.values
        agg = total - (self.n - 1) * self.prev_agg[batch]
        self.prev_agg[batch] = agg
        out = Message.array(Kind.AGG, round, BROADCAST, agg)
        self.transcript.record("out", out, batch)
        return out


def replay_aggregates(transcript: Transcript, n: int) -> list[tuple[int, int, np.ndarray]]:
    """Recompute every aggregate from the recorded masks and bootstrap reports.

    Returns ``(round, batch, aggregate)`` in transcript order.
    """
    prev: dict[int, np.ndarray] = {}
    pending: dict[tuple[int, int], list[MaskFrame]] = {}
    out = []
    for e in transcript.entries:
        m = e.message
        if e.direction != "in":
            continue
        if m.kind == Kind.AGG:
            prev[e.batch] = m.values
            out.append((m.round, e.batch, m.values))
        elif m.kind == Kind.MASK:
            key = (m.round, e.batch)
            pending.setdefault(key, []).append(MaskFrame(m.round, m.client, m.values))
            if len(pending[key]) == n:
                agg = unmask_aggregate(pending.pop(key), prev[e.batch], n)
                prev[e.batch] = agg.values
                out.append((m.round, e.batch, agg.values))
    return out


def simulate_protocol(frames: np.ndarray, key: bytes | None = None) -> tuple[list[np.ndarray], Transcript]:
    """Run the aggregation protocol alone on ``frames`` shaped (rounds, clients, ...).

    Returns the aggregate the server holds after every round and its transcript.
    """
    frames = np.asarray(frames, dtype=float)
    rounds, n = frames.shape[:2]
    box = CipherBox(key if key is not None else b"\x01" * 32)
    clients = [SecretClient(i, n, box) for i in range(n)]
    server = SecretServer(n)
    aggregates = []
    for r in range(rounds):
        inbox = [c.outgoing(frames[r, i], r) for i, c in enumerate(clients)]
        if r == 0:
            reply = server.combine(inbox, r)
            for c in clients:
                c.incoming(reply)
            agg = server.accept_report(clients[0].report(r))
        else:
            reply = server.unmask(inbox, r)
            for c in clients:
                c.incoming(reply)
            agg = reply.values
        aggregates.append(np.asarray(agg).reshape(frames.shape[2:]))
    return aggregates, server.transcript
