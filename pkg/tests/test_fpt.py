import threading

import numpy as np
import pytest

from conftest import benchmark_cities, federation_for
from fedtt.fpt import (FederationError, FreezeCache, FreezeMiss, ServerLink, _init_parties, freeze_get,
                       freeze_put, no_transfer_baseline, pack_discriminator, run_federation,
                       sequential_reference, unpack_discriminator)
from fedtt.nn import OptimizerConfig
from fedtt.tda import DiscriminatorParams, generate
from fedtt.transport import InProcessTransport
from fedtt.tst import CipherBox, ProtocolError, decode_fixed, encode_fixed, replay_aggregates
from fedtt.wire import Kind, Message

QUICK = dict(batch_frames=16, hidden=8, predictor_opt=OptimizerConfig("adam", 1e-3, 10))


# --- freeze caches -----------------------------------------------------------

def test_period_one_always_latest():
    cache = FreezeCache(1)
    for r in range(6):
        freeze_put(cache, "x", r, r * 10)
        assert freeze_get(cache, "x", r) == r * 10


def test_period_five_serves_stale_values():
    cache = FreezeCache(5)
    accepted = [freeze_put(cache, "x", r, f"v{r}") for r in range(10)]
    assert accepted == [True] + [False] * 4 + [True] + [False] * 4
    assert freeze_get(cache, "x", 3) == "v0"
    assert freeze_get(cache, "x", 7) == "v5"


def test_get_before_put_is_an_error():
    with pytest.raises(FreezeMiss):
        FreezeCache(5).get("x", 0)
    with pytest.raises(ValueError):
        FreezeCache(0)


def test_slots_are_independent():
    cache = FreezeCache(3)
    cache.put("a", 0, 1)
    assert cache.due("b", 1) and not cache.due("a", 2) and cache.due("a", 3)


# --- configuration -----------------------------------------------------------

def test_chunk_indices_cycle(cities):
    cfg = federation_for(cities, batches=4, batch_frames=32)
    assert cfg.chunk_count == min(len(c.series) for c in cities[:-1]) // 32
    assert [cfg.chunk_index(r, b) for r in range(2) for b in range(4)] == list(range(8))
    assert cfg.chunk_index(cfg.chunk_count, 0) == (cfg.chunk_count * 4) % cfg.chunk_count


@pytest.mark.parametrize("bad", [dict(rounds=-1), dict(batches=0), dict(lambda1=-0.1), dict(freeze_period=0),
                                 dict(transport="udp"), dict(batch_frames=10_000)])
def test_invalid_configs_are_rejected(cities, bad):
    with pytest.raises(ValueError):
        federation_for(cities, **bad).validate()


def test_discriminator_snapshot_roundtrip():
    d = DiscriminatorParams.create(4, 3, 6, seed=1, center=np.ones((4, 3)), scale=np.array([1.0, 2.0, 3.0]))
    back = unpack_discriminator(pack_discriminator(d))
    assert all(np.array_equal(a, b) for a, b in zip(back.blocks(), d.blocks()))
    assert np.array_equal(back.center, d.center) and np.array_equal(back.scale, d.scale)


# --- runtime -----------------------------------------------------------------

@pytest.fixture(scope="module")
def short_run(cities):
    return run_federation(federation_for(cities, rounds=3, batches=2, **QUICK))


def test_message_counts(short_run):
    counts = short_run.report.messages
    n, rounds, batches = 3, 3, 2
    assert counts["in_CIPHER0"] == n * batches and counts["out_CIPHER0"] == batches
    assert counts["in_AGG"] == batches  # bootstrap reports from client 0
    assert counts["in_MASK"] == n * batches * (rounds - 1)
    assert counts["out_AGG"] == batches * (rounds - 1)
    assert counts["out_DIS"] == 1  # period 5: only round 0


def test_round_zero_is_ciphertext_only(short_run):
    round0 = [e.message.kind for e in short_run.transcript.entries if e.message.round == 0]
    assert Kind.MASK not in round0 and Kind.CIPHER0 in round0
    round1_out = {e.message.kind for e in short_run.transcript.entries
                  if e.message.round == 1 and e.direction == "out"}
    assert round1_out == {Kind.AGG}


def test_barrier_integrity(short_run):
    seen: dict[tuple[int, int], int] = {}
    for e in short_run.transcript.entries:
        key = (e.message.round, e.batch)
        if e.direction == "in" and e.message.kind in (Kind.MASK, Kind.CIPHER0):
            seen[key] = seen.get(key, 0) + 1
        if e.direction == "out" and e.message.kind in (Kind.AGG, Kind.CIPHER0):
            assert seen.get(key) == 3


def test_report_accounting_matches_transcript(short_run):
    tr = short_run.transcript
    assert short_run.report.messages == tr.counts()
    assert short_run.report.bytes_total == tr.total_bytes() == sum(len(_enc(e.message)) for e in tr.entries)
    assert len(short_run.report.losses) == 3
    assert set(short_run.report.losses[0]) == {"generator", "client_dis", "server_dis", "predictor"}


def _enc(m):
    from fedtt.wire import encode
    return encode(m)


def test_replayed_aggregates_match_server(short_run):
    replayed = replay_aggregates(short_run.transcript, 3)
    live = [(m.round, m.values) for m in short_run.transcript.aggregates()]
    masked = [(r, a) for r, _, a in replayed if r >= 1]
    assert len(masked) == len(live)
    for (r1, a), (r2, b) in zip(masked, live):
        assert r1 == r2 and np.array_equal(a, b)


def test_aggregate_equals_mean_of_client_frames(cities):
    """Round 0 aggregate vs the mean of the clients' fixed-point transformed chunks."""
    cfg = federation_for(cities, rounds=1, **QUICK)
    run = run_federation(cfg)
    box = CipherBox(np.random.default_rng([cfg.seed, 99]).bytes(32))
    clients, _ = _init_parties(cfg, box)
    xs = []
    for c in clients:
        x = generate(c.chunk(0, cfg.batch_frames), c.gen, c.tb)
        xs.append(decode_fixed(encode_fixed(x.ravel(), box.bits), box.bits).reshape(x.shape))
    report = [e.message for e in run.transcript.entries if e.direction == "in" and e.message.kind == Kind.AGG][0]
    mean = np.mean(xs, axis=0)
    assert np.max(np.abs(report.values - mean)) <= 1e-9 * np.max(np.abs(mean))


def test_single_client_aggregate_is_its_own_data(caplog):
    cities = benchmark_cities(0, sensor_counts=(10, 8))
    cfg = federation_for(cities, rounds=1, **QUICK)
    with caplog.at_level("WARNING"):
        run = run_federation(cfg)
    assert run.report.degenerate and "single-client" in caplog.text
    box = CipherBox(np.random.default_rng([cfg.seed, 99]).bytes(32))
    (client,), _ = _init_parties(cfg, box)
    x = generate(client.chunk(0, cfg.batch_frames), client.gen, client.tb)
    agg = run.server.aggregated[0]
    assert np.max(np.abs(agg - x[0] if agg.ndim == 2 else agg - x)) <= 1e-9


def test_zero_rounds_equals_local_training(cities):
    cfg = federation_for(cities, rounds=0, **QUICK)
    run = run_federation(cfg)
    assert run.report.rounds == 0 and run.report.losses == [] and len(run.transcript) == 0
    _, base = no_transfer_baseline(cfg)
    assert np.array_equal(run.report.metrics.mae, base.mae)


def test_matches_sequential_reference(cities):
    cfg = federation_for(cities, rounds=5, batches=1, freeze_period=1, fresh_period=1, **QUICK)
    live = run_federation(cfg).report.losses
    ref = sequential_reference(cfg)
    for a, b in zip(live, ref):
        for k in a:
            assert abs(a[k] - b[k]) <= 1e-9 * max(1.0, abs(b[k]))


def test_sequential_reference_needs_period_one(cities):
    with pytest.raises(ValueError):
        sequential_reference(federation_for(cities, rounds=1, freeze_period=5))


def test_deterministic_reports(cities):
    cfg = lambda: federation_for(cities, rounds=3, batches=2, **QUICK)
    a, b = run_federation(cfg()).report, run_federation(cfg()).report
    assert a.to_text(timings=False) == b.to_text(timings=False)
    assert a.to_json(timings=False) == b.to_json(timings=False)
    assert "time." in a.to_text() and "time." not in a.to_text(timings=False)


def test_missing_client_is_named():
    transport = InProcessTransport(3)
    for c in (0, 2):
        transport.client_send(c, Message.array(Kind.MASK, 4, c, np.zeros((1, 2, 3))))
    link = ServerLink(transport, threading.Event(), 0.2)
    with pytest.raises(ProtocolError, match=r"missing message from client\(s\) \[1\]"):
        link.collect(3, 4, (Kind.MASK,), 0)


def test_duplicate_client_message_is_rejected():
    transport = InProcessTransport(2)
    for _ in range(2):
        transport.client_send(0, Message.array(Kind.MASK, 1, 0, np.zeros((1, 2, 3))))
    with pytest.raises(ProtocolError, match="duplicate"):
        ServerLink(transport, threading.Event(), 0.5).collect(2, 1, (Kind.MASK,), 0)


def test_failures_surface_with_context(cities):
    cfg = federation_for(cities, rounds=2, **QUICK)
    cfg.lambda1 = float("nan")  # passes the sign check, poisons the generator gradient
    with pytest.raises(FederationError) as info:
        run_federation(cfg)
    assert info.value.party.startswith("client") and info.value.round == 0
    assert "client round" in str(info.value)
