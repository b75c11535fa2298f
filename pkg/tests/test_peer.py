import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonrate import commitments, crypto
from anonrate.commitments import Entry, Nonce
from anonrate.ledger import Collector, Ledger, LedgerReplica
from anonrate.peer import (
    IncomingMessage,
    Peer,
    PeerConfig,
    Policy,
    Reason,
    Resolution,
    Status,
    forge_front_run,
    front_run_attempt,
    resolve_double_spend,
)
from anonrate.proofs import ApprovalProof, DevelopmentBackend, PublicInputs, Relation, Witness

DT = 10
KEYS = crypto.KeyPair.generate(random.Random(99))


class World:
    """A limiter key, a backend and message builders for one relation."""

    def __init__(self, seed=0):
        self.rng = random.Random(seed)
        self.backend = DevelopmentBackend()

    def peer(self, relation=Relation.TIME, **kw):
        kw.setdefault("dt_bound", DT if relation in (Relation.TIME, Relation.TOK_H, Relation.TOK_K) else None)
        return Peer("p", PeerConfig(relation=relation, **kw), self.backend, [KEYS.public_key])

    def _timed(self, leaf, t, t_pub):
        shc, salt = commitments.make_shc(leaf, self.rng)
        a = commitments.make_timestamped_approval(shc.root, t, KEYS)
        wit = Witness(salt_digest=salt.digest, commitment=shc.root, approval=a.approval_root, timestamp=t, signature=a.signature)
        return dict(limiter_key=KEYS.public_key, public_timestamp=t_pub, dt_bound=DT), wit

    def time_msg(self, content=None, t=100, t_pub=None):
        entry = Entry(content or self.rng.randbytes(8))
        common, wit = self._timed(entry.digest, t, t if t_pub is None else t_pub)
        proof = self.backend.prove(Relation.TIME, PublicInputs(entry_digest=entry.digest, **common), wit)
        return IncomingMessage(entry, proof)

    def token(self, keyed=False, t=100):
        nonce = Nonce.keyed(self.rng) if keyed else Nonce.random(self.rng)
        return nonce, self._timed(nonce.digest, t, t)

    def spend(self, token, content=None):
        nonce, (common, wit) = token
        entry = Entry(content or self.rng.randbytes(8))
        if nonce.secret_key is None:
            pub = PublicInputs(nonce_digest=nonce.digest, entry_digest=entry.digest, **common)
            return IncomingMessage(entry, self.backend.prove(Relation.TOK_H, pub, wit))
        pub = PublicInputs(nonce_public_key=nonce.value, **common)
        return IncomingMessage(entry, self.backend.prove(Relation.TOK_K, pub, wit), nonce.sign_entry(entry))


def test_honest_message_queued_then_accepted():
    w = World()
    peer = w.peer()
    msg = w.time_msg()
    assert peer.receive(msg, 100).status is Status.QUEUED
    assert peer.queue_tick(100) == [msg.entry]
    assert peer.decision_of(msg.message_id).accepted
    assert peer.accepted_digests() == {msg.entry.digest}


def test_receive_is_idempotent():
    w = World()
    peer = w.peer()
    msg = w.time_msg()
    first = peer.receive(msg, 100)
    assert peer.receive(msg, 100) == first
    assert peer.queue_size == 1


def test_unregistered_proof_is_bad():
    w = World()
    msg = w.time_msg()
    forged = IncomingMessage(msg.entry, ApprovalProof(Relation.TIME, msg.proof.public_inputs, bytes(32)))
    assert w.peer().receive(forged, 100).reason is Reason.BAD_PROOF


def test_entry_content_must_match_public_digest():
    w = World()
    msg = w.time_msg()
    swapped = IncomingMessage(Entry(b"other"), msg.proof)
    assert w.peer().receive(swapped, 100).reason is Reason.ENTRY_DIGEST_MISMATCH


def test_unknown_limiter_key_and_wrong_dt():
    w = World()
    msg = w.time_msg()
    stranger = Peer("p", PeerConfig(relation=Relation.TIME, dt_bound=DT), w.backend, [])
    assert stranger.receive(msg, 100).reason is Reason.BAD_PROOF
    assert w.peer(dt_bound=DT + 1).receive(msg, 100).reason is Reason.BAD_PROOF


def test_wrong_relation_is_bad_proof():
    w = World()
    assert w.peer(Relation.TOK_H).receive(w.time_msg(), 100).reason is Reason.BAD_PROOF


def test_stale_rejected_at_feed_and_at_dequeue():
    w = World()
    peer = w.peer(max_age=50)
    assert peer.receive(w.time_msg(t=10), 100).reason is Reason.STALE_TIMESTAMP
    fresh = w.time_msg(t=100)
    peer.receive(fresh, 100)
    peer.queue_tick(200)
    assert peer.decision_of(fresh.message_id).reason is Reason.STALE_TIMESTAMP


def test_queue_mode_keeps_stale_at_the_back():
    w = World()
    peer = w.peer(max_age=50, staleness="queue", tick_budget=1)
    old, new = w.time_msg(t=10), w.time_msg(t=100)
    peer.receive(old, 100)
    peer.receive(new, 100)
    assert peer.queue_tick(100) == [new.entry]
    assert peer.queue_tick(101) == [old.entry]


def test_newest_first_within_budget():
    w = World()
    peer = w.peer(tick_budget=2)
    msgs = [w.time_msg(t=t) for t in (100, 105, 102)]
    for m in msgs:
        peer.receive(m, 105)
    assert peer.queue_tick(105) == [msgs[1].entry, msgs[2].entry]


def test_overflow_drops_oldest():
    w = World()
    peer = w.peer(queue_capacity=2)
    a, b, c = (w.time_msg(t=t) for t in (100, 101, 102))
    for m in (a, b, c):
        peer.receive(m, 102)
    assert peer.decision_of(a.message_id).reason is Reason.QUEUE_OVERFLOW
    assert peer.queue_size == 2
    older = w.time_msg(t=99)
    assert peer.receive(older, 102).reason is Reason.QUEUE_OVERFLOW


def test_naive_mode():
    w = World()
    peer = Peer("p", PeerConfig(relation=None), w.backend, [KEYS.public_key])
    entry = Entry(b"hello")
    good = IncomingMessage(entry, commitments.PlainApproval(entry.digest, KEYS.sign(entry.digest), KEYS.public_key))
    assert peer.receive(good, 0).status is Status.QUEUED
    other = Entry(b"other")
    bad = IncomingMessage(other, good.proof)
    assert peer.receive(bad, 0).reason is Reason.ENTRY_DIGEST_MISMATCH


def test_collector_inclusion():
    w = World()
    led = Ledger()
    replica = LedgerReplica()
    led.subscribe(replica)
    col = Collector(led, depth=3)
    entry = Entry(b"batched")
    shc, salt = commitments.make_shc(entry.digest, w.rng)
    receipt = col.submit(shc.root)
    col.submit(crypto.hash(b"someone else"))
    col.seal()
    path, root = col.redeem(receipt)
    pub = PublicInputs(entry_digest=entry.digest, collector_root=root, tree_depth=3)
    msg = IncomingMessage(entry, w.backend.prove(Relation.INC, pub, Witness(salt_digest=salt.digest, path=path)))
    assert w.peer(Relation.INC).receive(msg, 1).reason is Reason.UNKNOWN_ROOT
    peer = Peer("p", PeerConfig(relation=Relation.INC), w.backend, [], replica)
    assert peer.receive(msg, 1).status is Status.QUEUED
    shallow = Peer("p", PeerConfig(relation=Relation.INC, tree_depth=2), w.backend, [], replica)
    assert shallow.receive(msg, 1).reason is Reason.BAD_PROOF


def test_keyed_token_needs_entry_signature():
    w = World()
    tok = w.token(keyed=True)
    msg = w.spend(tok)
    unsigned = IncomingMessage(msg.entry, msg.proof)
    peer = w.peer(Relation.TOK_K)
    assert peer.receive(unsigned, 100).reason is Reason.BAD_ENTRY_SIGNATURE
    assert peer.receive(msg, 100).status is Status.QUEUED


@pytest.mark.parametrize("relation,reason", [(Relation.TOK_H, Reason.BAD_PROOF), (Relation.TOK_K, Reason.BAD_ENTRY_SIGNATURE)])
@pytest.mark.parametrize("attacker_first", [True, False])
def test_front_running_fails_when_bound(relation, reason, attacker_first):
    w = World()
    honest = w.spend(w.token(keyed=relation is Relation.TOK_K))
    forged = forge_front_run(honest, Entry(b"attacker"), w.rng)
    peer = w.peer(relation)
    order = [forged, honest] if attacker_first else [honest, forged]
    for m in order:
        peer.receive(m, 100)
    peer.queue_tick(100)
    assert peer.decision_of(forged.message_id).reason is reason
    assert peer.accepted_digests() == {honest.entry.digest}


def test_front_running_wins_without_signature_check():
    w = World()
    honest = w.spend(w.token(keyed=True))
    peer = w.peer(Relation.TOK_K, require_entry_signature=False)
    assert front_run_attempt(peer, honest, Entry(b"attacker"), 100, w.rng).status is Status.QUEUED
    assert peer.receive(honest, 100).reason is Reason.DUPLICATE_NONCE


@pytest.mark.parametrize(
    "policy,expected",
    [
        ("first-wins", Resolution.KEEP_EXISTING),
        ("greater-hash-wins", Resolution.REPLACE),
        ("annihilate", Resolution.DROP_BOTH),
    ],
)
def test_resolve_double_spend(policy, expected):
    lo, hi = b"\x00" * 32, b"\xff" * 32
    assert resolve_double_spend(lo, hi, policy) is expected
    assert resolve_double_spend(hi, hi, policy) is Resolution.KEEP_EXISTING


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=32, max_size=32))
def test_greater_hash_is_order_independent(a, b):
    def winner(first, second):
        r = resolve_double_spend(first, second, Policy.GREATER_HASH_WINS)
        return second if r is Resolution.REPLACE else first

    assert winner(a, b) == winner(b, a) == max(a, b)


def _spends(seed):
    w = World(seed)
    msgs = []
    for k in range(3):
        tok = w.token()
        msgs += [w.spend(tok) for _ in range(k + 1)]
    msgs.append(w.time_msg(t=100))
    return w, msgs


def _accepted(w, msgs, order, policy):
    peer = w.peer(Relation.TOK_H, policy=policy)
    for i in order:
        peer.receive(msgs[i], 100)
        peer.queue_tick(100)
    return peer.accepted_digests()


@settings(max_examples=40, deadline=None)
@given(st.permutations(range(7)), st.sampled_from(["greater-hash-wins", "annihilate"]))
def test_order_independent_policies(order, policy):
    w, msgs = _spends(1)
    assert _accepted(w, msgs, order, policy) == _accepted(w, msgs, range(7), policy)


def test_first_wins_depends_on_order():
    w, msgs = _spends(2)
    assert _accepted(w, msgs, [1, 2], "first-wins") != _accepted(w, msgs, [2, 1], "first-wins")


def test_annihilate_burns_the_nonce():
    w = World()
    tok = w.token()
    a, b, c = (w.spend(tok) for _ in range(3))
    peer = w.peer(Relation.TOK_H, policy="annihilate")
    peer.receive(a, 100)
    peer.queue_tick(100)
    peer.receive(b, 101)
    assert peer.accepted_digests() == frozenset()
    assert peer.receive(c, 101).reason is Reason.DUPLICATE_NONCE


def test_decision_export():
    w = World()
    peer = w.peer()
    peer.receive(w.time_msg(), 100)
    peer.queue_tick(100)
    lines = peer.export_decisions().splitlines()
    assert [line.count('"status"') for line in lines] == [1, 1]


def test_config_validation():
    with pytest.raises(ValueError):
        PeerConfig(relation=Relation.TIME)
    with pytest.raises(ValueError):
        PeerConfig(relation=Relation.SIG, staleness="never")
    assert PeerConfig(relation=Relation.TIME, dt_bound=7).max_age == 70
