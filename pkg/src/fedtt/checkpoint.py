"""Binary parameter checkpoints: ``TVI1`` (imputer), ``TDA1`` (adapter), ``FTP1`` (predictor).

Layout::

    magic (4 bytes) | u32 block count | per block: u32 ndim, ndim x u32 dims | float64 data, row-major, little-endian

Blocks appear in declaration order; the first block of every file is a small
integer header vector (stored as float64) that identifies the model shape.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import MLP
from .predictor import HistoricalMean, LinearARPredictor
from .tda import DiscriminatorParams, GeneratorParams, TransformBundle
from .tvi import FeatureScaler, LinearAR, SpatialModelParams, TemporalModelParams, TVIModel


class CheckpointError(ValueError):
    pass


def dump_blocks(magic: bytes, blocks: Sequence[np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    parts = [magic, struct.pack("<I", len(blocks))]
    for b in blocks:
        b = np.asarray(b, dtype=float)
        parts.append(struct.pack(f"<I{b.ndim}I", b.ndim, *b.shape))
    parts += [np.ascontiguousarray(b, dtype="<f8").tobytes() for b in blocks]
    return b"".join(parts)


def parse_blocks(buf: bytes, magic: bytes) -> list[np.ndarray]:
    if buf[:4] != magic:
        raise CheckpointError(f"expected magic {magic!r}, found {buf[:4]!r}")
    try:
        (count,) = struct.unpack_from("<I", buf, 4)
        pos, shapes = 8, []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", buf, pos)
            shapes.append(struct.unpack_from(f"<{ndim}I", buf, pos + 4))
            pos += 4 + 4 * ndim
    except struct.error as exc:
        raise CheckpointError(f"truncated header: {exc}") from None
    out = []
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(buf):
            raise CheckpointError("truncated data")
        out.append(np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(float))
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError("trailing bytes after the last block")
    return out


def _ints(block: np.ndarray) -> list[int]:
    return [int(v) for v in block]


def _mlp_blocks(net: MLP) -> list[np.ndarray]:
    return net.blocks()


def _mlp_from(blocks: list[np.ndarray]) -> MLP:
    return MLP(list(blocks[0::2]), list(blocks[1::2]))


# --- predictor ---------------------------------------------------------------

_MEAN, _AR = 0, 1


def save_predictor(model, path, level=None) -> None:
    """The last block is the per-feature level that raw readings are divided by."""
    if isinstance(model, HistoricalMean):
        blocks = [np.array([_MEAN, model.history, model.horizon])]
    elif isinstance(model, LinearARPredictor):
        blocks = [np.array([_AR, model.history, model.horizon]), model.weights, model.bias]
    else:
        raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
    level = np.ones(3) if level is None else np.asarray(level, dtype=float)
    Path(path).write_bytes(dump_blocks(b"FTP1", blocks + [level]))


def load_predictor(path):
    """Returns ``(model, level)``."""
    blocks = parse_blocks(Path(path).read_bytes(), b"FTP1")
    kind, history, horizon = _ints(blocks[0])
    if kind == _MEAN and len(blocks) == 2:
        return HistoricalMean(history, horizon), blocks[1]
    if kind == _AR and len(blocks) == 4:
        model = LinearARPredictor(blocks[1], blocks[2])
        if (model.history, model.horizon) != (history, horizon):
            raise CheckpointError("predictor header disagrees with its weights")
        return model, blocks[3]
    raise CheckpointError(f"malformed predictor checkpoint (kind {kind}, {len(blocks)} blocks)")


# --- adapter -----------------------------------------------------------------

def _net_layers(net: MLP) -> int:
    return len(net.weights)


def save_adapter(path, tb: TransformBundle, gen: GeneratorParams, dis: DiscriminatorParams | None = None) -> None:
    """Transforms, generator (three branches and input statistics), optional discriminator."""
    layers = [_net_layers(b) for b in gen.branches()] + [_net_layers(dis.net) if dis else 0]
    blocks = [np.array(layers), tb.a_net, tb.a_proto, np.array([tb.residual_net, tb.residual_proto])]
    for br in gen.branches():
        blocks += _mlp_blocks(br)
    blocks += [gen.center, gen.scale]
    if dis is not None:
        blocks += _mlp_blocks(dis.net) + [dis.center, dis.scale]
    Path(path).write_bytes(dump_blocks(b"TDA1", blocks))


def load_adapter(path) -> tuple[TransformBundle, GeneratorParams, DiscriminatorParams | None]:
    blocks = parse_blocks(Path(path).read_bytes(), b"TDA1")
    layers = _ints(blocks[0])
    tb = TransformBundle(blocks[1], blocks[2], float(blocks[3][0]), float(blocks[3][1]))
    pos = 4
    nets = []
    for k in layers[:3]:
        nets.append(_mlp_from(blocks[pos:pos + 2 * k]))
        pos += 2 * k
    gen = GeneratorParams(*nets, blocks[pos], blocks[pos + 1])
    pos += 2
    dis = None
    if layers[3]:
        k = layers[3]
        dis = DiscriminatorParams(_mlp_from(blocks[pos:pos + 2 * k]), blocks[pos + 2 * k], blocks[pos + 2 * k + 1])
    return tb, gen, dis


# --- imputer -----------------------------------------------------------------

def save_tvi(model: TVIModel, path) -> None:
    sp, tp = model.spatial, model.temporal
    header = np.array([sp.heads, sp.width, len(sp.feature_net.weights), model.budget])
    blocks = [header, *sp.feature_net.blocks(), sp.head_w, sp.head_b,
              tp.forward.weights, tp.forward.bias, tp.backward.weights, tp.backward.bias,
              model.scaler.mean, model.scaler.std]
    Path(path).write_bytes(dump_blocks(b"TVI1", blocks))


def load_tvi(path) -> TVIModel:
    blocks = parse_blocks(Path(path).read_bytes(), b"TVI1")
    heads, width, layers, budget = _ints(blocks[0])
    pos = 1 + 2 * layers
    net = _mlp_from(blocks[1:pos])
    spatial = SpatialModelParams(net, blocks[pos], blocks[pos + 1], heads, width)
    fw = LinearAR(blocks[pos + 2], blocks[pos + 3])
    bw = LinearAR(blocks[pos + 4], blocks[pos + 5])
    scaler = FeatureScaler(blocks[pos + 6], blocks[pos + 7])
    return TVIModel(spatial, TemporalModelParams(fw, bw), scaler, budget)
