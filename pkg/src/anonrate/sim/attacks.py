"""Canned attack runs built on the bundled scenarios."""
from __future__ import annotations

import itertools

from anonrate.sim.engine import RunTranscript, run
from anonrate.sim.metrics import AnonymityReport, linkage_report, metrics
from anonrate.sim.scenario import Scenario, bundled_dict, merge, scenario_from_dict

__all__ = [
    "attack_doublespend",
    "attack_frontrun",
    "attack_linkage",
    "attack_prepared_flood",
    "attack_rotation",
    "delivery_orders",
    "AnonymityReport",
]


def _canned(name: str, overrides: dict) -> Scenario:
    data = merge(bundled_dict(name), overrides)
    data["assertions"] = {}  # canned runs report measurements; callers judge them
    return scenario_from_dict(data)


def flood_metrics(tr: RunTranscript) -> dict:
    sc = tr.scenario
    burst = sc["attacker"]["burst_tick"]
    m = metrics(tr)
    hoarded = [mid for mid, info in tr.messages.items() if info["kind"] == "hoard"]
    accepted = {p: set(ms) for p, ms in tr.accepted.items()}
    first_seen, accept_tick = {}, {}
    for ev in tr.events:
        if ev["ev"] == "decision":
            key = (ev["peer"], ev["msg"])
            first_seen.setdefault(key, ev["t"])
            if ev["status"] == "accepted":
                accept_tick[key] = ev["t"]
    burst_latency = [
        accept_tick[key] - first_seen[key]
        for key in accept_tick
        if tr.messages[key[1]]["role"] == "honest" and first_seen[key] >= burst
    ]
    # ground-truth age, which peers cannot see: accept tick minus the private approval time
    true_ages = [
        accept_tick[(p, mid)] - tr.messages[mid]["approval_ts"]
        for p in accepted
        for mid in accepted[p]
        if tr.messages[mid]["kind"] == "hoard" and "approval_ts" in tr.messages[mid]
    ]
    peers = sc["peers"]
    return {
        "hoarded": len(hoarded),
        "hoarded_accepted": max((sum(1 for mid in hoarded if mid in s) for s in accepted.values()), default=0),
        "stale_accepted": m["stale_accepted"],
        "max_true_age_accepted": max(true_ages, default=0),
        "honest_burst_latency_max": max(burst_latency, default=0),
        "honest_burst_messages": len(burst_latency),
        "latency_bound": peers["queue_capacity"] // peers["tick_budget"] + 1,
        "honest_accepted_fraction": m["honest_accepted_fraction"],
    }


def attack_prepared_flood(overrides: dict | None = None, mode: str = "timestamped") -> tuple[RunTranscript, dict]:
    name = "flood_shc" if mode == "shc" else "flood_timestamped"
    tr = run(_canned(name, merge({"mode": mode}, overrides)))
    return tr, flood_metrics(tr)


def attack_linkage(target: Scenario | RunTranscript) -> AnonymityReport:
    tr = run(target) if isinstance(target, Scenario) else target
    return linkage_report(tr)


def attack_rotation(n: int, coordination: str = "independent", seed: int = 0) -> float:
    sc = _canned("rotation_independent", {"seed": seed, "limiter": {"validators": n, "coordination": coordination}})
    return metrics(run(sc))["amplification"]


def attack_frontrun(mode: str, attacker_first: bool, seed: int = 0) -> dict:
    """Steal every honest proof; deliver the forgery before (or after) the original at every peer."""
    if attacker_first:
        attacker = {"targets": None, "delay": 0}
    else:
        attacker = {"targets": []}
    sc = _canned("frontrun_token_h", {"mode": mode, "seed": seed, "attacker": attacker})
    m = metrics(run(sc))
    return {
        "mode": mode,
        "attacker_first": attacker_first,
        "attacker_accepted": m["attacker_accepted"],
        "honest_accepted_fraction": m["honest_accepted_fraction"],
        "succeeded": m["attacker_accepted"] > 0,
    }


def delivery_orders(peers: int) -> list[list[list[int]]]:
    return [list(map(list, combo)) for combo in itertools.product([[0, 1], [1, 0]], repeat=peers)]


def attack_doublespend(policy: str, seed: int = 0, gap: int = 1) -> dict:
    """Replay one token twice under every per-peer delivery order; count divergent orders."""
    peers = bundled_dict("doublespend_greater_hash")["peers"]["count"]
    results = []
    for orders in delivery_orders(peers):
        sc = _canned(
            "doublespend_greater_hash",
            {"seed": seed, "peers": {"policy": policy}, "attacker": {"orders": orders, "gap": gap}},
        )
        m = metrics(run(sc))
        results.append({"orders": orders, "consistent": m["consistent"], "attacker_accepted": m["attacker_accepted"]})
    return {
        "policy": policy,
        "permutations": len(results),
        "divergent": sum(1 for r in results if not r["consistent"]),
        "runs": results,
    }
