import pytest
from hypothesis import given
from hypothesis import strategies as st

from anonrate import crypto
from anonrate.ledger import (
    BatchFull,
    BlockFull,
    Collector,
    EmptyBatch,
    Ledger,
    LedgerReplica,
    NotSealed,
    Receipt,
)


def d(i):
    return crypto.hash(i.to_bytes(4, "big"))


def test_append_get_and_block_cap():
    led = Ledger(max_appends_per_block=2, block_interval=5)
    assert led.append(d(1)) == 0
    led.append(d(2))
    with pytest.raises(BlockFull):
        led.append(d(3))
    led.produce_block(5)
    assert led.append(d(3)) == 1
    assert led.get() == [d(1), d(2), d(3)]
    with pytest.raises(ValueError):
        led.append(b"x")


def test_tick_seals_on_interval():
    led = Ledger(block_interval=4)
    sealed = [t for t in range(13) if led.tick(t) is not None]
    assert sealed == [4, 8, 12]
    assert [b.timestamp for b in led.blocks[:-1]] == [4, 8, 12]


def test_replica_tracks_events_only():
    led = Ledger(max_appends_per_block=3)
    replica = LedgerReplica()
    led.subscribe(replica)
    led.append(d(1))
    assert d(1) in replica and replica.timestamp_of(d(1)) is None
    led.produce_block(12)
    assert replica.timestamp_of(d(1)) == 12
    assert replica.digests == led.get()
    lines = led.export_events().splitlines()
    assert len(lines) == 2


def test_collector_errors():
    led = Ledger()
    col = Collector(led, depth=1)
    with pytest.raises(EmptyBatch):
        col.seal()
    r = col.submit(d(1))
    col.submit(d(2))
    with pytest.raises(BatchFull):
        col.submit(d(3))
    with pytest.raises(NotSealed):
        col.redeem(r)
    col.seal()
    path, root = col.redeem(r)
    assert crypto.merkle_verify(d(1), path, root)
    with pytest.raises(NotSealed):
        col.redeem(Receipt(5, 0))


def test_block_full_leaves_batch_pending():
    led = Ledger(max_appends_per_block=1)
    col = Collector(led, depth=1)
    col.submit(d(1))
    col.seal()
    col.submit(d(2))
    col.submit(d(3))
    assert col.due(0)
    assert col.tick(0) is None  # open block already holds its one append
    assert len(col.pending) == 2
    led.produce_block(12)
    assert col.tick(12) is not None and not col.pending


def test_seal_timeout():
    now = [0]
    col = Collector(Ledger(), depth=3, seal_timeout=5, clock=lambda: now[0])
    col.submit(d(1))
    now[0] = 4
    assert not col.due(4)
    assert col.due(5)


@given(st.integers(min_value=1, max_value=8))
def test_seal_appends_one_digest_for_any_batch_size(size):
    led = Ledger()
    col = Collector(led, depth=3)
    receipts = [col.submit(d(i)) for i in range(size)]
    before = sum(len(x) for x in led.get())
    root, _ = col.seal()
    assert sum(len(x) for x in led.get()) - before == 32
    assert led.get() == [root]
    for i, r in enumerate(receipts):
        path, got_root = col.redeem(r)
        assert got_root in led.get() and len(path) == 3
        assert crypto.merkle_verify(d(i), path, got_root)
