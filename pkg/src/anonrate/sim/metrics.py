"""Measurements computed from a ``RunTranscript`` alone."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from anonrate.limiter import Observation, audit_rate
from anonrate.sim.scenario import TIMED_MODES


@dataclass
class EntryAnonymity:
    message: str
    author: str
    set_size: int
    linked: float  # probability the best adversary names the author


@dataclass
class AnonymityReport:
    strategy: str
    entries: list[EntryAnonymity] = field(default_factory=list)

    @property
    def linkage_rate(self) -> float:
        if not self.entries:
            return 0.0
        return sum(e.linked for e in self.entries) / len(self.entries)

    @property
    def unique_linkage_rate(self) -> float:
        if not self.entries:
            return 0.0
        return sum(1 for e in self.entries if e.linked == 1.0) / len(self.entries)

    @property
    def mean_set_size(self) -> float:
        if not self.entries:
            return 0.0
        return sum(e.set_size for e in self.entries) / len(self.entries)

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "entries": len(self.entries),
            "linkage_rate": self.linkage_rate,
            "unique_linkage_rate": self.unique_linkage_rate,
            "mean_set_size": self.mean_set_size,
            "min_set_size": min((e.set_size for e in self.entries), default=0),
        }


def _dt(scenario: dict) -> int:
    return scenario["limiter"]["period"] if scenario.get("dt") is None else scenario["dt"]


def _max_age(scenario: dict) -> int:
    age = scenario["peers"].get("max_age")
    return 10 * _dt(scenario) if age is None else age


def linkage_report(tr) -> AnonymityReport:
    """Link published entries to requesters using only what the approver saw.

    naive: digest equality. shc: digest equality, which never matches.
    timed modes: requesters approved within ±dT of the public timestamp.
    collector: everyone who submitted to the batch named by the proof's root.
    """
    mode = tr.scenario["mode"]
    dt = _dt(tr.scenario)
    log = tr.limiter_log
    published = [(mid, m) for mid, m in sorted(tr.messages.items()) if m["role"] == "honest" and m["kind"] == "normal"]

    if mode == "naive":
        strategy = "digest-join"
    elif mode == "shc":
        strategy = "digest-join"
    elif mode == "collector":
        strategy = "batch-membership"
    else:
        strategy = "timing-window"

    by_digest = defaultdict(set)
    for row in log:
        by_digest[row["digest"]].add(row["requester"])
    by_batch = defaultdict(set)
    for row in tr.collector_log:
        by_batch[row["batch"]].add(row["requester"])

    report = AnonymityReport(strategy)
    for mid, m in published:
        author = m["author"]
        if strategy == "digest-join":
            candidates = by_digest.get(m["entry"], set())
            if mode == "shc":
                size = len({r["requester"] for r in log if r["timestamp"] <= m["publish_tick"]})
            else:
                size = len(candidates)
        elif strategy == "batch-membership":
            candidates = by_batch.get(m["batch"], set())
            size = len(candidates)
        else:
            t_pub = m["public_ts"]
            candidates = {r["requester"] for r in log if t_pub - dt <= r["timestamp"] <= t_pub + dt}
            size = len(candidates)
        linked = 1.0 / len(candidates) if author in candidates else 0.0
        report.entries.append(EntryAnonymity(mid, author, max(size, 1), linked))
    return report


def _decisions(tr):
    first_seen, accept_tick = {}, {}
    for ev in tr.events:
        if ev["ev"] != "decision":
            continue
        key = (ev["peer"], ev["msg"])
        first_seen.setdefault(key, ev["t"])
        if ev["status"] == "accepted":
            accept_tick[key] = ev["t"]
    return first_seen, accept_tick


def rate_violations(tr) -> list:
    sc = tr.scenario
    lim = sc["limiter"]
    rows = [Observation(r["requester"], bytes.fromhex(r["digest"]), r["timestamp"], r["validator"]) for r in tr.limiter_log]
    if lim["validators"] > 1 and lim["coordination"] == "independent":
        groups = defaultdict(list)
        for obs in rows:
            groups[obs.validator].append(obs)
        return [v for _, obs in sorted(groups.items()) for v in audit_rate(obs, lim["period"], lim["capacity"])]
    return audit_rate(rows, lim["period"], lim["capacity"])


def content_leaks(tr) -> int:
    """Count (request, entry) pairs where the request bytes carry entry content or its digest."""
    payloads = [bytes.fromhex(ev["payload"]) for ev in tr.events if ev["ev"] == "request"]
    leaks = 0
    for m in tr.messages.values():
        needles = (bytes.fromhex(m["content"]), bytes.fromhex(m["entry"]))
        leaks += sum(1 for p in payloads if any(n in p for n in needles))
    return leaks


def metrics(tr) -> dict:
    sc = tr.scenario
    msgs = tr.messages
    peers = sorted(tr.accepted)
    first_seen, accept_tick = _decisions(tr)

    entry_sets = {p: frozenset(msgs[m]["entry"] for m in tr.accepted[p]) for p in peers}
    consistent = len(set(entry_sets.values())) <= 1

    honest = [m for m in msgs if msgs[m]["role"] == "honest"]
    attacker_accepted = {p: sum(1 for m in tr.accepted[p] if msgs[m]["role"] == "attacker") for p in peers}
    honest_accepted = sum(1 for p in peers for m in tr.accepted[p] if msgs[m]["role"] == "honest")
    expected = len(honest) * len(peers)

    latencies = [accept_tick[(p, m)] - first_seen[(p, m)] for p in peers for m in tr.accepted[p] if msgs[m]["role"] == "honest"]

    # age is measured from the private approval time, which only the simulator knows
    max_age = _max_age(sc)
    stale = 0
    if sc["mode"] in TIMED_MODES:
        for p in peers:
            for m in tr.accepted[p]:
                if accept_tick[(p, m)] - msgs[m]["approval_ts"] > max_age:
                    stale += 1

    per_block = defaultdict(int)
    for ev in tr.events:
        if ev["ev"] == "seal":
            per_block[ev["block"]] += ev["size"]

    out = {
        "mode": sc["mode"],
        "peers": len(peers),
        "published": len(msgs),
        "honest_published": len(honest),
        "consistent": consistent,
        "attacker_accepted": max(attacker_accepted.values(), default=0),
        "attacker_accepted_by_peer": attacker_accepted,
        "honest_accepted_fraction": honest_accepted / expected if expected else 1.0,
        "honest_latency_max": max(latencies, default=0),
        "stale_accepted": stale,
        "approvals": len(tr.limiter_log),
        "rate_violations": len(rate_violations(tr)),
        "content_leaks": content_leaks(tr),
        "entries_per_block_max": max(per_block.values(), default=0),
        "anonymity": linkage_report(tr).summary(),
    }
    out["content_blind"] = out["content_leaks"] == 0
    attacker = sc.get("attacker") or {}
    if attacker.get("kind") == "rotation":
        lim = sc["limiter"]
        periods = math.ceil((sc["duration"] - attacker["start"]) / lim["period"])
        got = sum(1 for r in tr.limiter_log if r["requester"] == "attacker")
        out["amplification"] = got / (periods * lim["capacity"])
    return out


@dataclass
class AssertionResult:
    name: str
    ok: bool
    expected: object
    actual: object

    def to_json(self) -> dict:
        return asdict(self)


def check_assertions(m: dict, assertions: dict) -> list[AssertionResult]:
    actual = {
        "consistency": m["consistent"],
        "rate_sound": m["rate_violations"] == 0,
        "content_blind": m["content_blind"],
        "max_linkage_rate": m["anonymity"]["linkage_rate"],
        "min_linkage_rate": m["anonymity"]["linkage_rate"],
        "max_stale_accepted": m["stale_accepted"],
        "min_attacker_accepted": m["attacker_accepted"],
        "max_attacker_accepted": m["attacker_accepted"],
        "max_honest_latency": m["honest_latency_max"],
        "min_honest_accepted_fraction": m["honest_accepted_fraction"],
        "max_entries_per_block": m["entries_per_block_max"],
        "min_amplification": m.get("amplification"),
        "max_amplification": m.get("amplification"),
    }
    results = []
    for name, want in sorted(assertions.items()):
        got = actual[name]
        if got is None:
            ok = False
        elif name.startswith("max_"):
            ok = got <= want
        elif name.startswith("min_"):
            ok = got >= want
        else:
            ok = got == want
        results.append(AssertionResult(name, ok, want, got))
    return results
