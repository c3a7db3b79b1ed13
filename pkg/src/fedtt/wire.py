"""``FTT1`` binary frames exchanged between clients and the server.

Layout (all integers little-endian)::

    b"FTT1" | u8 kind | u32 round | u32 client | u32 rows | u32 cols | u32 features | payload

For ``MASK`` and ``AGG`` the payload is rows*cols*features float64 values in
row-major order.  ``CIPHER0`` and ``DIS`` carry opaque bytes behind a u32
length.  On a stream every frame is preceded by its own u32 byte length.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FTT1"
BROADCAST = 0xFFFFFFFF
_HEADER = struct.Struct("<4sBIIIII")
_LEN = struct.Struct("<I")


class WireError(ValueError):
    pass


class Kind(enum.IntEnum):
    CIPHER0 = 0  # bootstrap-round ciphertext (client -> server, and the combined broadcast)
    MASK = 1     # masked transformed block (client -> server)
    AGG = 2      # plaintext aggregate (server broadcast, or the bootstrap aggregate report)
    DIS = 3      # server discriminator snapshot (server broadcast)


OPAQUE = (Kind.CIPHER0, Kind.DIS)


@dataclass(frozen=True)
class Message:
    kind: Kind
    round: int
    client: int
    payload: np.ndarray | bytes
    shape: tuple[int, int, int] = (0, 0, 0)

    @classmethod
    def array(cls, kind: Kind, round: int, client: int, values: np.ndarray) -> "Message":
        v = np.asarray(values, dtype=float)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise WireError(f"array payload must be 3-d (rows, cols, features), got {v.shape}")
        return cls(Kind(kind), round, client, v, tuple(int(s) for s in v.shape))

    @classmethod
    def opaque(cls, kind: Kind, round: int, client: int, blob: bytes,
               shape: tuple[int, int, int] = (0, 0, 0)) -> "Message":
        return cls(Kind(kind), round, client, bytes(blob), shape)

    @property
    def values(self) -> np.ndarray:
        if self.kind in OPAQUE:
            raise WireError(f"{self.kind.name} carries opaque bytes")
        return self.payload


def encode(msg: Message) -> bytes:
    head = _HEADER.pack(MAGIC, int(msg.kind), msg.round, msg.client & 0xFFFFFFFF, *msg.shape)
    if msg.kind in OPAQUE:
        return head + _LEN.pack(len(msg.payload)) + msg.payload
    body = np.ascontiguousarray(msg.payload, dtype="<f8")
    if body.shape != tuple(msg.shape):
        raise WireError(f"payload shape {body.shape} disagrees with header {msg.shape}")
    return head + body.tobytes()


def decode(buf: bytes) -> Message:
    if len(buf) < _HEADER.size:
        raise WireError("truncated header")
    magic, kind, rnd, client, rows, cols, feats = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise WireError(f"unknown message kind {kind}") from None
    rest = buf[_HEADER.size:]
    if kind in OPAQUE:
        if len(rest) < _LEN.size:
            raise WireError("truncated opaque length")
        (n,) = _LEN.unpack_from(rest)
        if len(rest) != _LEN.size + n:
            raise WireError("opaque payload length mismatch")
        return Message(kind, rnd, client, bytes(rest[_LEN.size:]), (rows, cols, feats))
    need = rows * cols * feats * 8
    if len(rest) != need:
        raise WireError(f"expected {need} payload bytes, got {len(rest)}")
    values = np.frombuffer(rest, dtype="<f8").reshape(rows, cols, feats).astype(float)
    return Message(kind, rnd, client, values, (rows, cols, feats))


def frame(buf: bytes) -> bytes:
    """Length-prefix one encoded message for a byte stream."""
    return _LEN.pack(len(buf)) + buf


def read_frame(read_exactly) -> bytes:
    """Read one length-prefixed frame using ``read_exactly(n) -> bytes``."""
    (n,) = _LEN.unpack(read_exactly(_LEN.size))
    return read_exactly(n)
