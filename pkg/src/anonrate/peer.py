"""Peer node: verifies (entry, proof) messages and maintains the accepted set.

Checks run in a fixed order: proof, entry digest, mode-specific rules (ledger
root, entry signature, nonce), staleness, then the message joins a queue
ordered by public timestamp (newest first) and is accepted when a tick
dequeues it. A full queue drops its oldest item before taking a newer one.
"""
from __future__ import annotations

import bisect
import enum
import json
from dataclasses import dataclass, replace

from anonrate import crypto
from anonrate.commitments import Entry, PlainApproval
from anonrate.ledger import LedgerReplica
from anonrate.proofs import ApprovalProof, ProofBackend, Relation, verify

_TIMED = (Relation.TIME, Relation.TOK_H, Relation.TOK_K)
_DIGEST_BOUND = (Relation.SIG, Relation.TIME, Relation.TOK_H, Relation.INC)


class Status(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    QUEUED = "queued"


class Reason(enum.Enum):
    BAD_PROOF = "bad_proof"
    ENTRY_DIGEST_MISMATCH = "entry_digest_mismatch"
    STALE_TIMESTAMP = "stale_timestamp"
    DUPLICATE_NONCE = "duplicate_nonce"
    UNKNOWN_ROOT = "unknown_root"
    QUEUE_OVERFLOW = "queue_overflow"
    BAD_ENTRY_SIGNATURE = "bad_entry_signature"


@dataclass(frozen=True)
class AcceptDecision:
    status: Status
    reason: Reason | None = None

    @property
    def accepted(self) -> bool:
        return self.status is Status.ACCEPTED

    def __str__(self) -> str:
        return self.status.value if self.reason is None else f"{self.status.value}({self.reason.value})"


QUEUED = AcceptDecision(Status.QUEUED)
ACCEPTED = AcceptDecision(Status.ACCEPTED)


def rejected(reason: Reason) -> AcceptDecision:
    return AcceptDecision(Status.REJECTED, reason)


class Policy(enum.Enum):
    FIRST_WINS = "first-wins"
    GREATER_HASH_WINS = "greater-hash-wins"
    ANNIHILATE = "annihilate"


class Resolution(enum.Enum):
    KEEP_EXISTING = "keep"
    REPLACE = "replace"
    DROP_BOTH = "drop-both"


def resolve_double_spend(existing_digest: bytes, incoming_digest: bytes, policy: Policy | str) -> Resolution:
    """Decide between two messages spending the same nonce, by entry digest."""
    policy = Policy(policy)
    if existing_digest == incoming_digest:
        return Resolution.KEEP_EXISTING
    if policy is Policy.FIRST_WINS:
        return Resolution.KEEP_EXISTING
    if policy is Policy.GREATER_HASH_WINS:
        return Resolution.REPLACE if incoming_digest > existing_digest else Resolution.KEEP_EXISTING
    return Resolution.DROP_BOTH


@dataclass(frozen=True)
class IncomingMessage:
    entry: Entry
    proof: ApprovalProof | PlainApproval
    entry_signature: bytes | None = None

    @property
    def relation(self) -> Relation | None:
        return self.proof.relation if isinstance(self.proof, ApprovalProof) else None

    @property
    def public_timestamp(self) -> int | None:
        if isinstance(self.proof, ApprovalProof):
            return self.proof.public_inputs.public_timestamp
        return None

    @property
    def nonce_key(self) -> bytes | None:
        if not isinstance(self.proof, ApprovalProof):
            return None
        pub = self.proof.public_inputs
        if self.proof.relation is Relation.TOK_H:
            return pub.nonce_digest
        if self.proof.relation is Relation.TOK_K:
            return crypto.hash(pub.nonce_public_key)
        return None

    def proof_bytes(self) -> bytes:
        if isinstance(self.proof, ApprovalProof):
            return self.proof.to_bytes()
        return b"\x00" + self.proof.signed_digest + self.proof.signature + self.proof.limiter_key

    def to_bytes(self) -> bytes:
        sig = self.entry_signature or b""
        body = self.proof_bytes()
        return (
            len(self.entry.content).to_bytes(4, "big")
            + self.entry.content
            + len(body).to_bytes(4, "big")
            + body
            + len(sig).to_bytes(4, "big")
            + sig
        )

    @property
    def message_id(self) -> bytes:
        return crypto.hash(self.to_bytes())


@dataclass
class PeerConfig:
    relation: Relation | None = Relation.TIME  # None: naive signed digests
    policy: Policy = Policy.FIRST_WINS
    queue_capacity: int = 64
    tick_budget: int = 4
    dt_bound: int | None = None
    max_age: int | None = None
    staleness: str = "feed"  # "feed" rejects stale messages, "queue" keeps them at the back
    require_entry_signature: bool = True
    tree_depth: int = 3

    def __post_init__(self) -> None:
        self.policy = Policy(self.policy)
        if self.staleness not in ("feed", "queue"):
            raise ValueError(f"staleness must be 'feed' or 'queue', got {self.staleness!r}")
        if self.queue_capacity < 1 or self.tick_budget < 1:
            raise ValueError("queue capacity and tick budget must be >= 1")
        if self.relation in _TIMED and self.dt_bound is None:
            raise ValueError(f"{self.relation.label} peers need a dt_bound")
        if self.max_age is None and self.dt_bound is not None:
            self.max_age = 10 * self.dt_bound


@dataclass
class _Record:
    message: IncomingMessage
    key: tuple
    nonce: bytes | None
    decision: AcceptDecision
    priority_time: int


@dataclass(frozen=True)
class LoggedDecision:
    message_id: bytes
    decision: AcceptDecision
    tick: int

    def to_json(self) -> dict:
        return {
            "msg": self.message_id.hex(),
            "status": self.decision.status.value,
            "reason": self.decision.reason.value if self.decision.reason else None,
            "tick": self.tick,
        }


class Peer:
    def __init__(
        self,
        name: str,
        config: PeerConfig,
        backend: ProofBackend,
        limiter_keys=(),
        replica: LedgerReplica | None = None,
    ) -> None:
        self.name = name
        self.config = config
        self.backend = backend
        self.limiter_keys = set(limiter_keys)
        self.replica = replica
        self._records: dict[bytes, _Record] = {}
        self._queue: list[tuple] = []  # sorted priority keys; index 0 is served first
        self._by_key: dict[tuple, bytes] = {}
        self._accepted: dict[bytes, None] = {}  # ordered set of message ids
        self._nonce_holder: dict[bytes, bytes] = {}
        self._burned: set[bytes] = set()
        self._arrivals = 0
        self.decision_log: list[LoggedDecision] = []

    # -- views ---------------------------------------------------------------

    @property
    def queue_size(self) -> int:
        return len(self._queue)

    def accepted_messages(self) -> list[IncomingMessage]:
        return [self._records[mid].message for mid in self._accepted]

    def accepted_entries(self) -> list[Entry]:
        return [m.entry for m in self.accepted_messages()]

    def accepted_digests(self) -> frozenset[bytes]:
        return frozenset(m.entry.digest for m in self.accepted_messages())

    def decision_of(self, message_id: bytes) -> AcceptDecision | None:
        rec = self._records.get(message_id)
        return rec.decision if rec else None

    def export_decisions(self) -> str:
        return "".join(json.dumps(d.to_json(), sort_keys=True) + "\n" for d in self.decision_log)

    # -- internals -----------------------------------------------------------

    def _decide(self, mid: bytes, decision: AcceptDecision, now: int) -> AcceptDecision:
        self._records[mid].decision = decision
        self.decision_log.append(LoggedDecision(mid, decision, now))
        return decision

    def _check(self, msg: IncomingMessage, now: int) -> Reason | None:
        cfg = self.config
        if cfg.relation is None:
            proof = msg.proof
            if not isinstance(proof, PlainApproval) or proof.limiter_key not in self.limiter_keys:
                return Reason.BAD_PROOF
            if not proof.is_valid():
                return Reason.BAD_PROOF
            if proof.signed_digest != msg.entry.digest:
                return Reason.ENTRY_DIGEST_MISMATCH
            return None

        proof = msg.proof
        if not isinstance(proof, ApprovalProof) or proof.relation is not cfg.relation:
            return Reason.BAD_PROOF
        pub = proof.public_inputs
        if not verify(proof, self.backend):
            return Reason.BAD_PROOF
        if cfg.relation is Relation.INC:
            if pub.tree_depth != cfg.tree_depth:
                return Reason.BAD_PROOF
        elif pub.limiter_key not in self.limiter_keys:
            return Reason.BAD_PROOF
        if cfg.relation in _TIMED and pub.dt_bound != cfg.dt_bound:
            return Reason.BAD_PROOF

        if cfg.relation in _DIGEST_BOUND and pub.entry_digest != msg.entry.digest:
            return Reason.ENTRY_DIGEST_MISMATCH

        if cfg.relation is Relation.INC:
            if self.replica is None or pub.collector_root not in self.replica:
                return Reason.UNKNOWN_ROOT
        if cfg.relation is Relation.TOK_K and cfg.require_entry_signature:
            if not msg.entry_signature or not crypto.verify_signature(
                pub.nonce_public_key, msg.entry.digest, msg.entry_signature
            ):
                return Reason.BAD_ENTRY_SIGNATURE
        return None

    def _priority_time(self, msg: IncomingMessage, now: int) -> int:
        ts = msg.public_timestamp
        if ts is not None:
            return ts
        if msg.relation is Relation.INC and self.replica is not None:
            block_time = self.replica.timestamp_of(msg.proof.public_inputs.collector_root)
            if block_time is not None:
                return block_time
        return now

    def _is_stale(self, rec: _Record, now: int) -> bool:
        max_age = self.config.max_age
        if max_age is None or self.config.staleness != "feed":
            return False
        if rec.message.public_timestamp is None and rec.message.relation is not Relation.INC:
            return False
        # T' may run up to dT ahead of the private approval time; judge by the worst case
        slack = 0 if rec.message.relation is Relation.INC else self.config.dt_bound or 0
        return rec.priority_time - slack < now - max_age

    def _evict(self, mid: bytes, reason: Reason, now: int) -> None:
        rec = self._records[mid]
        if rec.decision.status is Status.QUEUED:
            i = bisect.bisect_left(self._queue, rec.key)
            del self._queue[i]
            del self._by_key[rec.key]
        elif rec.decision.status is Status.ACCEPTED:
            del self._accepted[mid]
        self._decide(mid, rejected(reason), now)

    def _enqueue(self, mid: bytes, now: int) -> AcceptDecision:
        rec = self._records[mid]
        if len(self._queue) >= self.config.queue_capacity:
            oldest = self._queue[-1]
            if rec.key > oldest:
                return self._decide(mid, rejected(Reason.QUEUE_OVERFLOW), now)
            self._evict(self._by_key[oldest], Reason.QUEUE_OVERFLOW, now)
        bisect.insort(self._queue, rec.key)
        self._by_key[rec.key] = mid
        return self._decide(mid, QUEUED, now)

    # -- protocol ------------------------------------------------------------

    def receive(self, msg: IncomingMessage, now: int) -> AcceptDecision:
        mid = msg.message_id
        if mid in self._records:
            return self._records[mid].decision

        priority_time = self._priority_time(msg, now)
        key = (-priority_time, msg.entry.digest, self._arrivals)
        self._arrivals += 1
        rec = _Record(msg, key, msg.nonce_key, QUEUED, priority_time)
        self._records[mid] = rec

        reason = self._check(msg, now)
        if reason is None and self._is_stale(rec, now):
            reason = Reason.STALE_TIMESTAMP
        if reason is not None:
            return self._decide(mid, rejected(reason), now)

        nonce = rec.nonce
        if nonce is not None:
            if nonce in self._burned:
                return self._decide(mid, rejected(Reason.DUPLICATE_NONCE), now)
            holder = self._nonce_holder.get(nonce)
            if holder is not None:
                existing = self._records[holder]
                outcome = resolve_double_spend(existing.message.entry.digest, msg.entry.digest, self.config.policy)
                if outcome is Resolution.KEEP_EXISTING:
                    return self._decide(mid, rejected(Reason.DUPLICATE_NONCE), now)
                if existing.decision.status is not Status.REJECTED:
                    self._evict(holder, Reason.DUPLICATE_NONCE, now)
                if outcome is Resolution.DROP_BOTH:
                    self._burned.add(nonce)
                    del self._nonce_holder[nonce]
                    return self._decide(mid, rejected(Reason.DUPLICATE_NONCE), now)
            self._nonce_holder[nonce] = mid

        return self._enqueue(mid, now)

    def queue_tick(self, now: int) -> list[Entry]:
        """Accept up to ``tick_budget`` queued messages, newest public timestamp first."""
        accepted = []
        while self._queue and len(accepted) < self.config.tick_budget:
            key = self._queue.pop(0)
            mid = self._by_key.pop(key)
            rec = self._records[mid]
            if self._is_stale(rec, now):
                self._decide(mid, rejected(Reason.STALE_TIMESTAMP), now)
                continue
            self._accepted[mid] = None
            self._decide(mid, ACCEPTED, now)
            accepted.append(rec.message.entry)
        return accepted


def forge_front_run(stolen: IncomingMessage, attacker_entry: Entry, rng=None) -> IncomingMessage:
    """The attacker's best use of an observed proof for different content.

    Public inputs that name the entry are rewritten to match the attacker's
    content; keyed-nonce messages get a signature under a key the attacker
    controls, since the nonce's secret key is not available.
    """
    proof = stolen.proof
    signature = None
    if isinstance(proof, ApprovalProof):
        pub = proof.public_inputs
        if pub.entry_digest is not None:
            proof = replace(proof, public_inputs=replace(pub, entry_digest=attacker_entry.digest))
        if proof.relation is Relation.TOK_K:
            signature = crypto.KeyPair.generate(rng).sign(attacker_entry.digest)
    elif isinstance(proof, PlainApproval):
        proof = replace(proof, signed_digest=attacker_entry.digest)
    return IncomingMessage(attacker_entry, proof, signature)


def front_run_attempt(peer: Peer, stolen: IncomingMessage, attacker_entry: Entry, now: int, rng=None) -> AcceptDecision:
    return peer.receive(forge_front_run(stolen, attacker_entry, rng), now)
