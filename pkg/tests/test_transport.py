import queue

import numpy as np
import pytest

from conftest import federation_for
from fedtt.fpt import run_federation
from fedtt.transport import InProcessTransport, TcpTransport, make_transport
from fedtt.wire import Kind, Message


@pytest.mark.parametrize("kind", ["inproc", "tcp"])
def test_messages_cross_both_ways(kind):
    with make_transport(kind, 3) as t:
        for c in range(3):
            t.client_send(c, Message.array(Kind.MASK, 1, c, np.full((2, 3), c)))
        got = sorted((t.server_recv(5.0) for _ in range(3)), key=lambda m: m.client)
        assert [m.client for m in got] == [0, 1, 2]
        assert all(np.array_equal(m.values, np.full((1, 2, 3), m.client)) for m in got)
        t.broadcast(Message.opaque(Kind.CIPHER0, 0, 0, b"blob"))
        assert all(t.client_recv(c, 5.0).payload == b"blob" for c in range(3))


@pytest.mark.parametrize("cls", [InProcessTransport, TcpTransport])
def test_receive_times_out(cls):
    with cls(1) as t:
        with pytest.raises(queue.Empty):
            t.server_recv(0.05)
        with pytest.raises(queue.Empty):
            t.client_recv(0, 0.05)


def test_received_message_is_a_fresh_copy():
    t = InProcessTransport(1)
    values = np.zeros((1, 2, 3))
    t.client_send(0, Message.array(Kind.MASK, 1, 0, values))
    values[...] = 9.0
    assert np.all(t.server_recv(1.0).values == 0.0)


def test_unknown_transport():
    with pytest.raises(ValueError):
        make_transport("carrier-pigeon", 2)


def test_tcp_and_inproc_runs_agree(cities):
    reports = [run_federation(federation_for(cities, rounds=3, batches=2, batch_frames=16, hidden=8,
                                             transport=kind)).report
               for kind in ("inproc", "tcp")]
    assert reports[0].to_text(timings=False) == reports[1].to_text(timings=False)
