"""Honest and single-field-mutated relation instances for proof tests."""
from __future__ import annotations

import dataclasses
import random

from anonrate import commitments, crypto
from anonrate.commitments import Entry, Nonce, Salt
from anonrate.crypto import MerklePath, PathStep
from anonrate.proofs import INT_FIELDS, PUBLIC_FIELDS, WITNESS_FIELDS, PublicInputs, Relation, Witness

DT_CHOICES = (1, 5, 60)


def honest_instance(relation: Relation, rng: random.Random) -> tuple[PublicInputs, Witness]:
    keys = crypto.KeyPair.generate(rng)
    entry = Entry(rng.randbytes(24))
    if relation is Relation.INC:
        depth = rng.randint(0, 4)
        salt = Salt.fresh(rng)
        leaf = commitments.shc_root(entry.digest, salt.digest)
        n = rng.randint(1, 1 << depth)
        leaves = [rng.randbytes(32) for _ in range(n)]
        idx = rng.randrange(n)
        leaves[idx] = leaf
        root, paths = crypto.merkle_build(leaves, depth)
        pub = PublicInputs(entry_digest=entry.digest, collector_root=root, tree_depth=depth)
        return pub, Witness(salt_digest=salt.digest, path=paths[idx])
    if relation is Relation.SIG:
        shc, salt = commitments.make_shc(entry.digest, rng)
        pub = PublicInputs(entry_digest=entry.digest, limiter_key=keys.public_key)
        return pub, Witness(salt_digest=salt.digest, commitment=shc.root, signature=keys.sign(shc.root))

    extra = {}
    if relation is Relation.TIME:
        leaf = entry.digest
        extra["entry_digest"] = entry.digest
    elif relation is Relation.TOK_H:
        nonce = Nonce.random(rng)
        leaf = nonce.digest
        extra.update(nonce_digest=nonce.digest, entry_digest=entry.digest)
    else:
        nonce = Nonce.keyed(rng)
        leaf = nonce.digest
        extra["nonce_public_key"] = nonce.value
    shc, salt = commitments.make_shc(leaf, rng)
    dt = rng.choice(DT_CHOICES)
    t = rng.randint(dt, 2**40)
    approval = commitments.make_timestamped_approval(shc.root, t, keys)
    pub = PublicInputs(
        limiter_key=keys.public_key, public_timestamp=t + rng.randint(-dt, dt), dt_bound=dt, **extra
    )
    wit = Witness(
        salt_digest=salt.digest,
        commitment=shc.root,
        approval=approval.approval_root,
        timestamp=t,
        signature=approval.signature,
    )
    return pub, wit


def flip_bit(value: bytes, rng: random.Random) -> bytes:
    bit = rng.randrange(len(value) * 8)
    out = bytearray(value)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def _flip_int(name: str, value: int, pub: PublicInputs, rng: random.Random) -> int:
    if name == "public_timestamp":
        # a flip below 2*dt could stay inside the window; that is not a mutation of meaning
        low = (2 * pub.dt_bound + 1).bit_length()
        return value ^ (1 << rng.randint(low, 40))
    return value ^ (1 << rng.randint(0, 5))


def _flip_path(path: MerklePath, rng: random.Random) -> MerklePath:
    if not path.steps:
        return MerklePath((PathStep(rng.randbytes(32), crypto.Side.RIGHT),))
    steps = list(path.steps)
    i = rng.randrange(len(steps))
    if rng.random() < 0.5:
        steps[i] = PathStep(flip_bit(steps[i].sibling, rng), steps[i].side)
    else:
        # a side swap changes the fold unless sibling == running node
        steps[i] = PathStep(steps[i].sibling, crypto.Side(1 - steps[i].side))
    return MerklePath(tuple(steps))


def mutation_fields(relation: Relation) -> list[tuple[str, str]]:
    return [("public", n) for n in PUBLIC_FIELDS[relation]] + [("witness", n) for n in WITNESS_FIELDS[relation]]


def mutate(relation: Relation, pub: PublicInputs, wit: Witness, which: tuple[str, str], rng: random.Random):
    """Flip one field. Returns the mutated (pub, wit)."""
    side, name = which
    target = pub if side == "public" else wit
    value = getattr(target, name)
    if name in INT_FIELDS:
        new = _flip_int(name, value, pub, rng)
    elif isinstance(value, MerklePath):
        new = _flip_path(value, rng)
    else:
        new = flip_bit(value, rng)
    target = dataclasses.replace(target, **{name: new})
    return (target, wit) if side == "public" else (pub, target)
