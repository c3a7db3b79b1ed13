import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedtt.wire import BROADCAST, MAGIC, Kind, Message, WireError, decode, encode, frame, read_frame


@given(arrays(float, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 3)),
              elements=st.floats(allow_nan=False, width=64)),
       st.sampled_from([Kind.MASK, Kind.AGG]), st.integers(0, 2 ** 32 - 1))
def test_array_roundtrip(values, kind, rnd):
    msg = Message.array(kind, rnd, 3, values)
    back = decode(encode(msg))
    assert back.kind == kind and back.round == rnd and back.client == 3
    assert np.array_equal(back.values, values)


def test_opaque_roundtrip():
    msg = Message.opaque(Kind.CIPHER0, 0, BROADCAST, b"\x00\x01abc", (1, 2, 3))
    back = decode(encode(msg))
    assert back.payload == b"\x00\x01abc" and back.shape == (1, 2, 3) and back.client == BROADCAST
    with pytest.raises(WireError):
        back.values


def test_header_layout():
    buf = encode(Message.array(Kind.MASK, 7, 2, np.zeros((4, 3))))
    assert buf[:4] == MAGIC and buf[4] == 1
    assert len(buf) == 4 + 1 + 5 * 4 + 4 * 3 * 8


def test_two_dimensional_payload_gains_a_row_axis():
    assert Message.array(Kind.AGG, 0, 0, np.zeros((5, 3))).shape == (1, 5, 3)
    with pytest.raises(WireError):
        Message.array(Kind.AGG, 0, 0, np.zeros(5))


@pytest.mark.parametrize("mutate", [
    lambda b: b[:10],
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + bytes([9]) + b[5:],
    lambda b: b[:-1],
    lambda b: b + b"\x00",
])
def test_malformed_messages_raise(mutate):
    buf = encode(Message.array(Kind.AGG, 1, 0, np.ones((1, 2, 3))))
    with pytest.raises(WireError):
        decode(mutate(buf))


def test_opaque_length_mismatch():
    buf = encode(Message.opaque(Kind.DIS, 0, 0, b"abcd"))
    with pytest.raises(WireError):
        decode(buf[:-1])


def test_framing_over_a_stream():
    msgs = [encode(Message.array(Kind.MASK, r, 0, np.full((2, 3), r))) for r in range(3)]
    stream = memoryview(b"".join(frame(m) for m in msgs))
    pos = 0

    def read_exactly(k):
        nonlocal pos
        out = bytes(stream[pos:pos + k])
        pos += k
        return out

    assert [read_frame(read_exactly) for _ in msgs] == msgs
