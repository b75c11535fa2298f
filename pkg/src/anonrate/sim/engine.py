"""Deterministic discrete-event run of one scenario.

One tick is one second of model time. Within a tick the order is fixed:
block production, collector sealing, honest users, attacker, publications,
deliveries, then every peer's queue tick. All randomness comes from
``random.Random`` streams seeded from ``(scenario.seed, stream label)``, so a
scenario fully determines its transcript.
"""
from __future__ import annotations

import heapq
import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from anonrate import commitments
from anonrate.commitments import Entry, Nonce, TimestampedApproval
from anonrate.ledger import BatchFull, Collector, Ledger, LedgerReplica, Receipt
from anonrate.limiter import Federation, Mode, RateLimited, RatePolicy
from anonrate.peer import IncomingMessage, Peer, PeerConfig, forge_front_run
from anonrate.proofs import DevelopmentBackend, PublicInputs, Relation, Witness
from anonrate.sim.scenario import Scenario, TOKEN_MODES

SETTLE_LIMIT = 10_000

RELATION_FOR_MODE = {
    "naive": None,
    "shc": Relation.SIG,
    "timestamped": Relation.TIME,
    "federated": Relation.TIME,
    "token-h": Relation.TOK_H,
    "token-k": Relation.TOK_K,
    "token-open": Relation.TOK_K,
    "collector": Relation.INC,
}

LIMITER_MODE = {
    "naive": Mode.NAIVE,
    "shc": Mode.SHC,
    "timestamped": Mode.TIMESTAMPED,
    "federated": Mode.TIMESTAMPED,
    "token-h": Mode.TOKEN,
    "token-k": Mode.TOKEN,
    "token-open": Mode.TOKEN,
}


@dataclass
class RunTranscript:
    scenario: dict
    events: list[dict] = field(default_factory=list)
    messages: dict[str, dict] = field(default_factory=dict)
    accepted: dict[str, list[str]] = field(default_factory=dict)
    limiter_log: list[dict] = field(default_factory=list)
    collector_log: list[dict] = field(default_factory=list)
    limiter_keys: list[str] = field(default_factory=list)
    final_tick: int = 0

    def lines(self):
        dump = lambda obj: json.dumps(obj, sort_keys=True, separators=(",", ":"))  # noqa: E731
        yield dump({"type": "scenario", "scenario": self.scenario, "limiter_keys": self.limiter_keys})
        for ev in self.events:
            yield dump({"type": "event", **ev})
        for mid in sorted(self.messages):
            yield dump({"type": "message", "id": mid, **self.messages[mid]})
        for row in self.limiter_log:
            yield dump({"type": "observation", **row})
        for row in self.collector_log:
            yield dump({"type": "collected", **row})
        for peer in sorted(self.accepted):
            yield dump({"type": "accepted", "peer": peer, "messages": self.accepted[peer]})
        yield dump({"type": "end", "tick": self.final_tick})

    def to_jsonl(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> RunTranscript:
        tr = None
        for line in text.splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            kind = row.pop("type")
            if kind == "scenario":
                tr = cls(row["scenario"], limiter_keys=row["limiter_keys"])
            elif kind == "event":
                tr.events.append(row)
            elif kind == "message":
                tr.messages[row.pop("id")] = row
            elif kind == "observation":
                tr.limiter_log.append(row)
            elif kind == "collected":
                tr.collector_log.append(row)
            elif kind == "accepted":
                tr.accepted[row["peer"]] = row["messages"]
            elif kind == "end":
                tr.final_tick = row["tick"]
        if tr is None:
            raise ValueError("transcript has no scenario header")
        return tr


@dataclass
class _User:
    name: str
    offset: int
    home: int = 0
    posts: int = 0
    retry: list = field(default_factory=list)


@dataclass
class _Publication:
    message: IncomingMessage
    info: dict
    delays: dict[int, int] | None = None


@dataclass
class _Token:
    nonce: Nonce
    approval: TimestampedApproval
    commitment: commitments.SaltedHashCommitment
    salt: commitments.Salt


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.sc = scenario.validate()
        self.now = 0
        self._seq = itertools.count()
        self.events: list[dict] = []
        self.messages: dict[str, dict] = {}
        self._bodies: dict[str, IncomingMessage] = {}
        self.backend = DevelopmentBackend()
        self.dt = self.sc.dt_bound

        self.rng_keys = self._stream("keys")
        self.rng_sched = self._stream("schedule")
        self.rng_users = self._stream("users")
        self.rng_net = self._stream("network")
        self.rng_attacker = self._stream("attacker")

        clock = lambda: self.now  # noqa: E731
        self.federation: Federation | None = None
        self.ledger: Ledger | None = None
        self.collector: Collector | None = None
        if self.sc.mode == "collector":
            led = self.sc.ledger
            self.ledger = Ledger(led.max_appends, led.block_interval)
            self.collector = Collector(self.ledger, led.depth, led.seal_timeout, clock)
        else:
            lim = self.sc.limiter
            policy = RatePolicy(lim.period, lim.capacity, lim.global_cap)
            self.federation = Federation.build(lim.validators, policy, clock, lim.coordination, rng=self.rng_keys)

        relation = RELATION_FOR_MODE[self.sc.mode]
        keys = self.federation.public_keys if self.federation else []
        self.peers: list[Peer] = []
        for i in range(self.sc.peers.count):
            cfg = PeerConfig(
                relation=relation,
                policy=self.sc.peers.policy_for(i),
                queue_capacity=self.sc.peers.queue_capacity,
                tick_budget=self.sc.peers.tick_budget,
                dt_bound=self.dt if relation in (Relation.TIME, Relation.TOK_H, Relation.TOK_K) else None,
                max_age=self.sc.max_age,
                staleness=self.sc.peers.staleness,
                require_entry_signature=self.sc.mode != "token-open",
                tree_depth=self.sc.ledger.depth,
            )
            replica = None
            if self.ledger is not None:
                replica = LedgerReplica()
                self.ledger.subscribe(replica)
            self.peers.append(Peer(f"peer-{i}", cfg, self.backend, keys, replica))
        self._cursor = [0] * len(self.peers)

        n_validators = self.sc.limiter.validators
        self.users = []
        for i in range(self.sc.users.count):
            offset = self.rng_sched.randint(0, self.sc.users.offset_spread) if self.sc.users.offset_spread else 0
            self.users.append(_User(f"user-{i}", offset, home=i % n_validators))

        self._publications: list = []
        self._deliveries: list = []
        self._waiting: dict[Receipt, tuple[str, Entry, commitments.Salt, str]] = {}
        self._hoard: list[_Publication] = []
        self._token: _Token | None = None
        self._attacker_posts = 0

    def _stream(self, label: str) -> random.Random:
        return random.Random(f"{self.sc.seed}/{label}")

    # -- message construction ----------------------------------------------

    def _content(self, author: str, k: int, rng: random.Random) -> Entry:
        return Entry(f"{author}/post-{k}/".encode() + rng.randbytes(8))

    def _public_timestamp(self, t: int, rng: random.Random) -> int:
        if self.dt == 0:
            return t
        # never publish the exact approval time; stay non-negative near t=0
        offset = rng.choice((-1, 1)) * rng.randint(1, self.dt)
        return t + offset if t + offset >= 0 else t - offset

    def _request(self, requester: str, digest: bytes, start: int = 0, only: int | None = None):
        fed = self.federation
        before = [len(v.wire_log) for v in fed.validators]
        mode = LIMITER_MODE[self.sc.mode]
        if only is None:
            result = fed.request(requester, digest, mode, start=start)
        else:
            result = fed.validators[only].request_approval(requester, digest, mode)
        sent = []
        for v, n in zip(fed.validators, before):
            for payload in v.wire_log[n:]:
                ev = {"t": self.now, "ev": "request", "who": requester, "v": v.index, "payload": payload.hex(), "ok": False}
                self.events.append(ev)
                sent.append(ev)
        if not isinstance(result, RateLimited):
            approver = [ev for ev in sent if ev["v"] == result_validator(fed, result)]
            approver[-1]["ok"] = True
        else:
            sent[-1]["retry_after"] = result.retry_after
        return result

    def _timed_witness(self, shc, salt, approval: TimestampedApproval) -> Witness:
        return Witness(
            salt_digest=salt.digest,
            commitment=shc.root,
            approval=approval.approval_root,
            timestamp=approval.timestamp,
            signature=approval.signature,
        )

    def _acquire(self, requester: str, entry: Entry, rng: random.Random, start: int = 0, only=None, freshest=False):
        """Approval plus proof for ``entry`` in non-token, non-collector modes."""
        mode = self.sc.mode
        if mode == "naive":
            result = self._request(requester, entry.digest, start, only)
            if isinstance(result, RateLimited):
                return None
            return IncomingMessage(entry, result), {}
        shc, salt = commitments.make_shc(entry.digest, rng)
        result = self._request(requester, shc.root, start, only)
        if isinstance(result, RateLimited):
            return None
        if mode == "shc":
            pub = PublicInputs(entry_digest=entry.digest, limiter_key=result.limiter_key)
            wit = Witness(salt_digest=salt.digest, commitment=shc.root, signature=result.signature)
            return IncomingMessage(entry, self.backend.prove(Relation.SIG, pub, wit)), {}
        t_pub = result.timestamp + self.dt if freshest else self._public_timestamp(result.timestamp, rng)
        pub = PublicInputs(
            entry_digest=entry.digest, limiter_key=result.limiter_key, public_timestamp=t_pub, dt_bound=self.dt
        )
        proof = self.backend.prove(Relation.TIME, pub, self._timed_witness(shc, salt, result))
        return IncomingMessage(entry, proof), {"approval_ts": result.timestamp}

    def _acquire_token(self, requester: str, rng: random.Random) -> _Token | None:
        nonce = Nonce.keyed(rng) if self.sc.mode == "token-k" else Nonce.random(rng)
        shc, salt = commitments.make_shc(nonce.digest, rng)
        result = self._request(requester, shc.root)
        if isinstance(result, RateLimited):
            return None
        return _Token(nonce, result, shc, salt)

    def _spend(self, token: _Token, entry: Entry, rng: random.Random, freshest=False) -> IncomingMessage:
        approval = token.approval
        t_pub = approval.timestamp + self.dt if freshest else self._public_timestamp(approval.timestamp, rng)
        wit = self._timed_witness(token.commitment, token.salt, approval)
        common = dict(limiter_key=approval.limiter_key, public_timestamp=t_pub, dt_bound=self.dt)
        signature = None
        if self.sc.mode == "token-h":
            pub = PublicInputs(nonce_digest=token.nonce.digest, entry_digest=entry.digest, **common)
            proof = self.backend.prove(Relation.TOK_H, pub, wit)
        else:
            pub = PublicInputs(nonce_public_key=token.nonce.value, **common)
            proof = self.backend.prove(Relation.TOK_K, pub, wit)
            if self.sc.mode == "token-k":
                signature = token.nonce.sign_entry(entry)
        return IncomingMessage(entry, proof, signature)

    def _build(self, requester: str, entry: Entry, rng: random.Random, **kw):
        if self.sc.mode in TOKEN_MODES:
            token = self._acquire_token(requester, rng)
            if token is None:
                return None
            msg = self._spend(token, entry, rng, freshest=kw.get("freshest", False))
            return msg, {"approval_ts": token.approval.timestamp, "nonce": token.nonce.digest.hex()}
        return self._acquire(requester, entry, rng, **kw)

    # -- scheduling ---------------------------------------------------------

    def _schedule_publication(self, tick: int, pub: _Publication) -> None:
        heapq.heappush(self._publications, (tick, next(self._seq), pub))

    def _deliver_at(self, tick: int, peer: int, mid: str) -> None:
        heapq.heappush(self._deliveries, (tick, next(self._seq), peer, mid))

    def _publish(self, pub: _Publication) -> str:
        msg = pub.message
        mid = msg.message_id.hex()
        info = {
            "entry": msg.entry.digest.hex(),
            "content": msg.entry.content.hex(),
            "public_ts": msg.public_timestamp,
            "publish_tick": self.now,
            "relation": msg.relation.label if msg.relation else "naive",
            **pub.info,
        }
        self.messages[mid] = info
        self._bodies[mid] = msg
        self.events.append({"t": self.now, "ev": "publish", "msg": mid, "who": info["author"]})
        net = self.sc.network
        for p in range(len(self.peers)):
            if pub.delays is not None and p in pub.delays:
                delay = pub.delays[p]
            else:
                delay = net.delay + (self.rng_net.randint(0, net.jitter) if net.jitter else 0)
            self._deliver_at(self.now + delay, p, mid)
        return mid

    def _honest_posts(self, t: int) -> None:
        u = self.sc.users
        for user in self.users:
            if u.schedule == "periodic":
                due = t >= u.start + user.offset and (t - u.start - user.offset) % self.sc.user_period == 0
            else:
                due = t >= u.start and self.rng_sched.random() < u.activity
            if self.sc.mode == "collector":
                self._collector_retry(user)
            if not due:
                continue
            entry = self._content(user.name, user.posts, self.rng_users)
            user.posts += 1
            if self.sc.mode == "collector":
                shc, salt = commitments.make_shc(entry.digest, self.rng_users)
                user.retry.append((entry, shc, salt))
                self._collector_retry(user)
                continue
            built = self._build(user.name, entry, self.rng_users, start=user.home)
            if built is None:
                continue
            msg, extra = built
            info = {"author": user.name, "role": "honest", "kind": "normal", **extra}
            self._schedule_publication(t + u.publish_delay, _Publication(msg, info))

    def _collector_retry(self, user: _User) -> None:
        while user.retry:
            entry, shc, salt = user.retry[0]
            try:
                receipt = self.collector.submit(shc.root, user.name)
            except BatchFull:
                return
            user.retry.pop(0)
            self._waiting[receipt] = (user.name, entry, salt, shc.root)
            self.events.append({"t": self.now, "ev": "submit", "who": user.name, "root": shc.root.hex(), "batch": receipt.batch})

    def _collector_step(self, t: int) -> None:
        sealed = self.collector.tick(t)
        if sealed is None:
            return
        self.events.append(
            {"t": t, "ev": "seal", "batch": sealed.batch, "root": sealed.root.hex(), "block": sealed.block_index, "size": sealed.size}
        )
        for receipt in [r for r in self._waiting if r.batch == sealed.batch]:
            author, entry, salt, _ = self._waiting.pop(receipt)
            path, root = self.collector.redeem(receipt)
            pub = PublicInputs(entry_digest=entry.digest, collector_root=root, tree_depth=self.collector.depth)
            proof = self.backend.prove(Relation.INC, pub, Witness(salt_digest=salt.digest, path=path))
            info = {"author": author, "role": "honest", "kind": "normal", "root": root.hex(), "batch": sealed.batch}
            self._schedule_publication(t + self.sc.users.publish_delay, _Publication(IncomingMessage(entry, proof), info))

    # -- attackers ----------------------------------------------------------

    def _attacker_entry(self, kind: str) -> Entry:
        entry = Entry(f"attacker/{kind}/{self._attacker_posts}/".encode() + self.rng_attacker.randbytes(8))
        self._attacker_posts += 1
        return entry

    def _attacker_step(self, t: int) -> None:
        a = self.sc.attacker
        if a is None or t < a.start:
            return
        if a.kind == "hoard":
            if t < a.burst_tick:
                entry = self._attacker_entry("hoard")
                built = self._build("attacker", entry, self.rng_attacker, freshest=True)
                if built is not None:
                    msg, extra = built
                    info = {"author": "attacker", "role": "attacker", "kind": "hoard", **extra}
                    self._hoard.append(_Publication(msg, info))
            elif t == a.burst_tick:
                for pub in self._hoard:
                    self._schedule_publication(t, pub)
                self._hoard = []
        elif a.kind == "rotation":
            n = len(self.federation.validators)
            for k in range(n):
                entry = self._attacker_entry("rotation")
                built = self._acquire("attacker", entry, self.rng_attacker, only=(t + k) % n)
                if built is not None:
                    msg, extra = built
                    info = {"author": "attacker", "role": "attacker", "kind": "rotation", **extra}
                    self._schedule_publication(t + self.sc.users.publish_delay, _Publication(msg, info))
        elif a.kind == "doublespend":
            if self._token is None and t < a.spend_tick:
                self._token = self._acquire_token("attacker", self.rng_attacker)
            elif t == a.spend_tick and self._token is not None:
                self._double_spend(t)

    def _double_spend(self, t: int) -> None:
        a = self.sc.attacker
        token, self._token = self._token, None
        mids = []
        for _ in range(2):
            msg = self._spend(token, self._attacker_entry("doublespend"), self.rng_attacker)
            info = {
                "author": "attacker",
                "role": "attacker",
                "kind": "doublespend",
                "approval_ts": token.approval.timestamp,
                "nonce": token.nonce.digest.hex(),
            }
            mid = msg.message_id.hex()
            self.messages[mid] = {
                "entry": msg.entry.digest.hex(),
                "content": msg.entry.content.hex(),
                "public_ts": msg.public_timestamp,
                "publish_tick": t,
                "relation": msg.relation.label,
                **info,
            }
            self._bodies[mid] = msg
            self.events.append({"t": t, "ev": "publish", "msg": mid, "who": "attacker"})
            mids.append(mid)
        base = t + self.sc.network.delay
        for p in range(len(self.peers)):
            order = a.orders[p] if a.orders else [0, 1]
            self._deliver_at(base, p, mids[order[0]])
            self._deliver_at(base + a.gap, p, mids[order[1]])

    def _front_run(self, honest: _Publication) -> None:
        a = self.sc.attacker
        entry = self._attacker_entry("frontrun")
        forged = forge_front_run(honest.message, entry, self.rng_attacker)
        targets = a.targets if a.targets is not None else range(len(self.peers))
        delays = {p: (a.delay if p in targets else self.sc.network.delay + 1) for p in range(len(self.peers))}
        info = {"author": "attacker", "role": "attacker", "kind": "frontrun", "victim": honest.message.message_id.hex(), "approval_ts": honest.info["approval_ts"]}
        self._publish(_Publication(forged, info, delays))

    # -- main loop ----------------------------------------------------------

    def _drain_decisions(self, p: int) -> None:
        peer = self.peers[p]
        for d in peer.decision_log[self._cursor[p] :]:
            ev = {"t": d.tick, "ev": "decision", "peer": peer.name, "msg": d.message_id.hex(), "status": d.decision.status.value}
            if d.decision.reason is not None:
                ev["reason"] = d.decision.reason.value
            self.events.append(ev)
        self._cursor[p] = len(peer.decision_log)

    def _busy(self) -> bool:
        if self._publications or self._deliveries:
            return True
        if any(p.queue_size for p in self.peers):
            return True
        if self.collector is not None and (self._waiting or any(u.retry for u in self.users)):
            return True
        return False

    def step(self, t: int, active: bool) -> None:
        self.now = t
        if self.ledger is not None:
            block = self.ledger.tick(t)
            if block is not None:
                self.events.append({"t": t, "ev": "block", "block": block.index, "ts": block.timestamp})
        if self.collector is not None:
            if not active:
                for user in self.users:
                    self._collector_retry(user)
            self._collector_step(t)
        if active:
            self._honest_posts(t)
            self._attacker_step(t)

        frontrun = self.sc.attacker is not None and self.sc.attacker.kind == "frontrun" and t >= self.sc.attacker.start
        while self._publications and self._publications[0][0] <= t:
            _, _, pub = heapq.heappop(self._publications)
            self._publish(pub)
            if frontrun and pub.info.get("role") == "honest":
                self._front_run(pub)

        while self._deliveries and self._deliveries[0][0] <= t:
            _, _, p, mid = heapq.heappop(self._deliveries)
            self.peers[p].receive(self._bodies[mid], t)
            self._drain_decisions(p)

        for p, peer in enumerate(self.peers):
            peer.queue_tick(t)
            self._drain_decisions(p)

    def run(self) -> RunTranscript:
        t = 0
        for t in range(self.sc.duration):
            self.step(t, active=True)
        t = self.sc.duration
        if self.sc.settle:
            limit = self.sc.duration + SETTLE_LIMIT
            while self._busy() and t < limit:
                self.step(t, active=False)
                t += 1
        return self._transcript(t)

    def _transcript(self, final_tick: int) -> RunTranscript:
        tr = RunTranscript(self.sc.to_dict(), self.events, self.messages, final_tick=final_tick)
        for peer in self.peers:
            tr.accepted[peer.name] = sorted(m.message_id.hex() for m in peer.accepted_messages())
        if self.federation is not None:
            tr.limiter_keys = [k.hex() for k in self.federation.public_keys]
            for obs in self.federation.log_view():
                tr.limiter_log.append(
                    {"requester": obs.requester, "digest": obs.digest.hex(), "timestamp": obs.timestamp, "validator": obs.validator}
                )
        if self.collector is not None:
            for requester, root, tick, batch in self.collector.log:
                tr.collector_log.append({"requester": requester, "root": root.hex(), "tick": tick, "batch": batch})
        return tr


def result_validator(fed: Federation, approval) -> int:
    return next(v.index for v in fed.validators if v.public_key == approval.limiter_key)


def run(scenario: Scenario) -> RunTranscript:
    return Simulation(scenario).run()
