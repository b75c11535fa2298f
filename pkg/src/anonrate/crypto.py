"""Hashing, signatures, integer encoding and fixed-depth Merkle trees.

Every byte that enters a hash is produced here, so two implementations that
agree on this module agree on every commitment, approval and tree root.

Encoding rules:
  - hash is SHA-256; digests are 32 raw bytes
  - integers are 8-byte big-endian unsigned
  - Merkle internal nodes are ``H(0x01 || left || right)``
  - empty leaf slots hold ``H(0x00)``, the leaf-domain hash of empty data
  - two-leaf commitment roots use the bare ``H(a || b)`` of ``hash_concat``
"""
from __future__ import annotations

import enum
import hashlib
import os
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


class MerkleError(ValueError):
    pass


class EmptyLeaves(MerkleError):
    pass


class TooManyLeaves(MerkleError):
    pass


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the protocol's H(x)
    return hashlib.sha256(data).digest()


def hash_concat(a: bytes, b: bytes) -> bytes:
    """``H(a || b)``. Order-sensitive."""
    return hashlib.sha256(a + b).digest()


def encode_int(value: int) -> bytes:
    if value < 0:
        raise ValueError(f"cannot encode negative integer {value}")
    return value.to_bytes(8, "big")


def decode_int(data: bytes) -> int:
    if len(data) != 8:
        raise ValueError(f"integer field must be 8 bytes, got {len(data)}")
    return int.from_bytes(data, "big")


def leaf_hash(data: bytes) -> bytes:
    return hash(LEAF_PREFIX + data)


def node_hash(left: bytes, right: bytes) -> bytes:
    return hash(NODE_PREFIX + left + right)


EMPTY_LEAF = leaf_hash(b"")


def is_digest(value: object) -> bool:
    return isinstance(value, bytes) and len(value) == DIGEST_SIZE


# -- signatures --------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    secret_key: bytes
    public_key: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> KeyPair:
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return cls(secret_key=bytes(seed), public_key=pk)

    @classmethod
    def generate(cls, rng=None) -> KeyPair:
        """Fresh key pair. ``rng`` (anything with ``randbytes``) makes it reproducible."""
        seed = rng.randbytes(32) if rng is not None else os.urandom(32)
        return cls.from_seed(seed)

    def sign(self, message: bytes) -> bytes:
        return sign(self.secret_key, message)


@lru_cache(maxsize=4096)
def _private_key(secret_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret_key)


@lru_cache(maxsize=4096)
def _public_key(public_key: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public_key)


def sign(secret_key: bytes, message: bytes) -> bytes:
    return _private_key(secret_key).sign(message)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if not isinstance(public_key, bytes) or len(public_key) != PUBLIC_KEY_SIZE:
        return False
    if not isinstance(signature, bytes) or len(signature) != SIGNATURE_SIZE:
        return False
    try:
        _public_key(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- Merkle trees ------------------------------------------------------------


class Side(enum.IntEnum):
    """Which side of the running node the sibling sits on."""

    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True)
class PathStep:
    sibling: bytes
    side: Side


@dataclass(frozen=True)
class MerklePath:
    steps: tuple[PathStep, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def to_bytes(self) -> bytes:
        return b"".join(bytes([step.side]) + step.sibling for step in self.steps)

    @classmethod
    def from_bytes(cls, data: bytes) -> MerklePath:
        width = 1 + DIGEST_SIZE
        if len(data) % width:
            raise MerkleError(f"path encoding length {len(data)} is not a multiple of {width}")
        steps = []
        for off in range(0, len(data), width):
            side_byte = data[off]
            if side_byte not in (Side.LEFT, Side.RIGHT):
                raise MerkleError(f"invalid side byte {side_byte:#x}")
            steps.append(PathStep(data[off + 1 : off + width], Side(side_byte)))
        return cls(tuple(steps))

    def to_json(self) -> list[list[str]]:
        return [[s.sibling.hex(), s.side.name.lower()] for s in self.steps]

    @classmethod
    def from_json(cls, items) -> MerklePath:
        return cls(tuple(PathStep(bytes.fromhex(sib), Side[side.upper()]) for sib, side in items))


def merkle_fold(leaf: bytes, path: MerklePath) -> bytes:
    node = leaf
    for step in path:
        if step.side is Side.LEFT:
            node = node_hash(step.sibling, node)
        else:
            node = node_hash(node, step.sibling)
    return node


def merkle_build(leaves: list[bytes], depth: int) -> tuple[bytes, list[MerklePath]]:
    """Build a complete tree of ``depth`` over ``leaves``, padding with ``EMPTY_LEAF``.

    Returns the root and one path per input leaf, in input order.
    """
    if depth < 0:
        raise MerkleError(f"depth must be non-negative, got {depth}")
    if not leaves:
        raise EmptyLeaves("cannot build a tree with no leaves")
    width = 1 << depth
    if len(leaves) > width:
        raise TooManyLeaves(f"{len(leaves)} leaves exceed capacity {width} at depth {depth}")

    level = list(leaves) + [EMPTY_LEAF] * (width - len(leaves))
    levels = [level]
    while len(level) > 1:
        level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)

    paths = []
    for index in range(len(leaves)):
        steps = []
        pos = index
        for lvl in levels[:-1]:
            if pos % 2:
                steps.append(PathStep(lvl[pos - 1], Side.LEFT))
            else:
                steps.append(PathStep(lvl[pos + 1], Side.RIGHT))
            pos //= 2
        paths.append(MerklePath(tuple(steps)))
    return levels[-1][0], paths


def merkle_verify(leaf: bytes, path: MerklePath, root: bytes) -> bool:
    return merkle_fold(leaf, path) == root
