"""Command-line entry point.

Exit codes: 0 success, 1 assertion or verification failure, 2 usage or
configuration error. Machine-readable JSON lines go to stdout; a short human
summary goes to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from anonrate import commitments, crypto
from anonrate.commitments import Entry, Salt
from anonrate.proofs import ApprovalProof, DevelopmentBackend, ProofError, PublicInputs, Relation, Witness
from anonrate.sim import attacks
from anonrate.sim.engine import run
from anonrate.sim.metrics import check_assertions, metrics
from anonrate.sim.scenario import ScenarioError, bundled_dict, bundled_names, load_scenario_dict, merge, scenario_from_dict

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

ATTACK_MODES = ("flood", "linkage", "rotation", "frontrun", "doublespend")


class UsageError(Exception):
    pass


def emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def note(text: str) -> None:
    print(text, file=sys.stderr)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def _write_json(path: str, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _hex(value: str, what: str, size: int | None = None) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except (TypeError, ValueError):
        raise UsageError(f"{what} must be hex") from None
    if size is not None and len(raw) != size:
        raise UsageError(f"{what} must be {size} bytes, got {len(raw)}")
    return raw


# -- run ---------------------------------------------------------------------


def _scenario_dict(ref: str) -> dict:
    if Path(ref).exists() or ref not in bundled_names():
        return load_scenario_dict(ref)
    return bundled_dict(ref)


def cmd_run(args) -> int:
    overrides = {"seed": args.seed} if args.seed is not None else None
    scenario = scenario_from_dict(merge(_scenario_dict(args.scenario), overrides))
    tr = run(scenario)
    m = metrics(tr)
    results = check_assertions(m, scenario.assertions)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        tr.write(out / "transcript.jsonl")
        _write_json(out / "metrics.json", {"metrics": m, "assertions": [r.to_json() for r in results]})
    emit({"type": "metrics", "scenario": scenario.name, **m})
    for r in results:
        emit({"type": "assertion", **r.to_json()})
    failed = [r for r in results if not r.ok]
    a = m["anonymity"]
    note(
        f"{scenario.name}: mode={scenario.mode} published={m['published']} consistent={m['consistent']} "
        f"linkage={a['linkage_rate']:.3f} stale={m['stale_accepted']} attacker_accepted={m['attacker_accepted']}"
    )
    for r in failed:
        note(f"  FAIL {r.name}: expected {r.expected!r}, got {r.actual!r}")
    note(f"{len(results) - len(failed)}/{len(results)} assertions passed")
    return EXIT_FAIL if failed else EXIT_OK


# -- attack ------------------------------------------------------------------


def _attack_flood(seed):
    overrides = {"seed": seed} if seed is not None else None
    _, shc = attacks.attack_prepared_flood(overrides, mode="shc")
    _, ts = attacks.attack_prepared_flood(overrides, mode="timestamped")
    yield {"case": "shc", **shc}, shc["hoarded_accepted"] == shc["hoarded"]
    ok = ts["stale_accepted"] == 0 and ts["honest_burst_latency_max"] <= ts["latency_bound"]
    yield {"case": "timestamped", **ts}, ok


def _attack_linkage(seed):
    expect = {
        "naive_linkage": lambda r: r.linkage_rate == 1.0,
        "shc_linkage": lambda r: r.linkage_rate == 0.0,
        "timestamped_single": lambda r: r.unique_linkage_rate == 1.0,
        "timestamped_pair": lambda r: r.linkage_rate <= 0.5,
    }
    for name, check in expect.items():
        data = merge(bundled_dict(name), {"seed": seed} if seed is not None else None)
        report = attacks.attack_linkage(scenario_from_dict(data))
        yield {"case": name, **report.summary()}, check(report)


def _attack_rotation(seed):
    for coordination in ("independent", "shared"):
        for n in (1, 2, 3, 5):
            factor = attacks.attack_rotation(n, coordination, seed or 0)
            want = float(n) if coordination == "independent" else 1.0
            yield {"case": f"{coordination}-{n}", "amplification": factor, "expected": want}, factor == want


def _attack_frontrun(seed):
    open_hits = []
    for mode in ("token-h", "token-k", "token-open"):
        for first in (True, False):
            r = attacks.attack_frontrun(mode, first, seed or 0)
            if mode == "token-open":
                open_hits.append(r["succeeded"])
                yield r, True
            else:
                yield r, not r["succeeded"]
    yield {"case": "token-open succeeds in some order", "succeeded": any(open_hits)}, any(open_hits)


def _attack_doublespend(seed):
    for policy in ("first-wins", "greater-hash-wins", "annihilate"):
        r = attacks.attack_doublespend(policy, seed or 0)
        r.pop("runs")
        ok = r["divergent"] > 0 if policy == "first-wins" else r["divergent"] == 0
        yield r, ok


_ATTACKS = {
    "flood": _attack_flood,
    "linkage": _attack_linkage,
    "rotation": _attack_rotation,
    "frontrun": _attack_frontrun,
    "doublespend": _attack_doublespend,
}


def cmd_attack(args) -> int:
    modes = [args.mode] if args.mode else list(ATTACK_MODES)
    failures = 0
    rows = []
    for mode in modes:
        for row, ok in _ATTACKS[mode](args.seed):
            row = {"type": "attack", "attack": mode, "ok": ok, **row}
            rows.append(row)
            emit(row)
            failures += not ok
            note(f"{'ok  ' if ok else 'FAIL'} {mode}: {row.get('case', row.get('mode', row.get('policy', '')))}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "attacks.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    note(f"{len(rows) - failures}/{len(rows)} expected outcomes reproduced")
    return EXIT_FAIL if failures else EXIT_OK


# -- commit / prove / verify -------------------------------------------------


def cmd_commit(args) -> int:
    try:
        content = Path(args.entry).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {args.entry}: {exc.strerror or exc}") from None
    entry = Entry(content)
    salt = Salt(_hex(args.salt, "--salt", 32)) if args.salt else Salt.fresh()
    shc, salt = commitments.make_shc(entry.digest, salt=salt)
    doc = {"entry_digest": entry.digest.hex(), "salt_digest": salt.digest.hex(), "root": shc.root.hex()}
    if args.out:
        _write_json(args.out, doc)
    emit({"type": "commitment", **doc})
    note(f"commitment root {shc.root.hex()}")
    return EXIT_OK


def _registry_for(path: str, explicit: str | None) -> Path:
    return Path(explicit) if explicit else Path(str(path) + ".registry.json")


def cmd_prove(args) -> int:
    """Act as a local limiter (key from --key-seed), approve the commitment, and prove."""
    doc = _read_json(args.commitment)
    try:
        entry_digest = _hex(doc["entry_digest"], "entry_digest", 32)
        salt_digest = _hex(doc["salt_digest"], "salt_digest", 32)
        root = _hex(doc["root"], "root", 32)
    except KeyError as exc:
        raise UsageError(f"commitment file lacks {exc.args[0]}") from None
    if commitments.shc_root(entry_digest, salt_digest) != root:
        raise UsageError("commitment file does not open: root != H(entry_digest || salt_digest)")
    relation = Relation.parse(args.relation)
    keys = crypto.KeyPair.from_seed(_hex(args.key_seed, "--key-seed", 32))
    if relation is Relation.SIG:
        pub = PublicInputs(entry_digest=entry_digest, limiter_key=keys.public_key)
        wit = Witness(salt_digest=salt_digest, commitment=root, signature=keys.sign(root))
    elif relation is Relation.TIME:
        approval = commitments.make_timestamped_approval(root, args.timestamp, keys)
        t_pub = args.timestamp if args.public_timestamp is None else args.public_timestamp
        pub = PublicInputs(entry_digest=entry_digest, limiter_key=keys.public_key, public_timestamp=t_pub, dt_bound=args.dt)
        wit = Witness(
            salt_digest=salt_digest,
            commitment=root,
            approval=approval.approval_root,
            timestamp=approval.timestamp,
            signature=approval.signature,
        )
    else:
        raise UsageError("prove supports R-SIG and R-TIME; token and inclusion proofs come from the simulator")
    registry = _registry_for(args.out, args.registry)
    backend = DevelopmentBackend(registry)
    try:
        proof = backend.prove(relation, pub, wit)
    except ProofError as exc:
        note(f"relation does not hold: {exc}")
        return EXIT_FAIL
    backend.save()
    _write_json(args.out, proof.to_json())
    emit({"type": "proof", **proof.to_json()})
    note(f"{relation.label} proof written to {args.out} (registry {registry})")
    return EXIT_OK


def cmd_verify(args) -> int:
    doc = _read_json(args.proof)
    try:
        proof = ApprovalProof.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed proof file: {exc}") from None
    registry = _registry_for(args.proof, args.registry)
    if not registry.exists():
        raise UsageError(f"registry {registry} not found")
    ok = DevelopmentBackend(registry).verify(proof)
    emit({"type": "verify", "relation": proof.relation.label, "ok": ok})
    note(f"{proof.relation.label} proof {'verifies' if ok else 'does NOT verify'}")
    return EXIT_OK if ok else EXIT_FAIL


# -- vectors -----------------------------------------------------------------

VECTOR_ENTRY = b"hello world"
VECTOR_SALT = bytes(range(32))
VECTOR_TIMESTAMP = 1_700_000_000


def golden_vectors() -> dict:
    shc, salt = commitments.make_shc(crypto.hash(VECTOR_ENTRY), salt=Salt(VECTOR_SALT))
    leaves = [crypto.hash(bytes([i])) for i in range(1, 6)]
    root, paths = crypto.merkle_build(leaves, 3)
    return {
        "hash_empty": crypto.hash(b"").hex(),
        "hash_concat_ab": crypto.hash_concat(crypto.hash(b"a"), crypto.hash(b"b")).hex(),
        "shc": {
            "entry_hex": VECTOR_ENTRY.hex(),
            "salt_secret": VECTOR_SALT.hex(),
            "entry_digest": shc.leaf.hex(),
            "salt_digest": salt.digest.hex(),
            "root": shc.root.hex(),
        },
        "timestamped_approval": {
            "timestamp": VECTOR_TIMESTAMP,
            "timestamp_digest": commitments.timestamp_digest(VECTOR_TIMESTAMP).hex(),
            "approval_root": commitments.approval_root(shc.root, VECTOR_TIMESTAMP).hex(),
        },
        "merkle_depth3": {
            "leaves": [leaf.hex() for leaf in leaves],
            "empty_leaf": crypto.EMPTY_LEAF.hex(),
            "root": root.hex(),
            "path_leaf4": paths[4].to_json(),
        },
    }


def cmd_vectors(args) -> int:
    vectors = golden_vectors()
    for name in sorted(vectors):
        emit({"type": "vector", "name": name, "value": vectors[name]})
    note(f"{len(vectors)} vector groups")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anonrate", description="Anonymous rate-limited publication toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file (or bundled scenario name)")
    p.add_argument("--scenario", required=True, help="YAML scenario path or bundled name")
    p.add_argument("--out", help="directory for transcript.jsonl and metrics.json")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", help="run the canned attack suites")
    p.add_argument("--mode", choices=ATTACK_MODES, help="one suite (default: all)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("commit", help="salted hash commitment over an entry file")
    p.add_argument("--entry", required=True)
    p.add_argument("--salt", help="32-byte salt secret as hex (default: fresh random)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_commit)

    p = sub.add_parser("prove", help="approve a commitment with a local limiter key and prove R-SIG or R-TIME")
    p.add_argument("--commitment", required=True)
    p.add_argument("--relation", default="R-TIME", choices=("R-SIG", "R-TIME"))
    p.add_argument("--key-seed", required=True, help="32-byte limiter key seed as hex")
    p.add_argument("--timestamp", type=int, default=0, help="approval time T")
    p.add_argument("--public-timestamp", type=int, help="published time T' (default: T)")
    p.add_argument("--dt", type=int, default=10, help="allowed |T - T'|")
    p.add_argument("--out", required=True)
    p.add_argument("--registry", help="proof registry file (default: <out>.registry.json)")
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("verify", help="verify a proof file against its registry")
    p.add_argument("--proof", required=True)
    p.add_argument("--registry", help="proof registry file (default: <proof>.registry.json)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("vectors", help="print the pinned golden vectors")
    p.set_defaults(func=cmd_vectors)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits 2 on usage errors
    try:
        return args.func(args)
    except (UsageError, ScenarioError, ValueError) as exc:
        note(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
