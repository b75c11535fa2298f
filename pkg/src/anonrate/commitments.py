"""Salted hash commitments, timestamped approvals and token nonces."""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

from anonrate import crypto

SALT_SIZE = 32
NONCE_SIZE = 32


def _randbytes(n: int, rng=None) -> bytes:
    return rng.randbytes(n) if rng is not None else os.urandom(n)


@dataclass(frozen=True)
class Entry:
    content: bytes
    digest: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "digest", crypto.hash(self.content))


@dataclass(frozen=True)
class Salt:
    secret: bytes = field(repr=False)
    digest: bytes = field(init=False)

    def __post_init__(self) -> None:
        if len(self.secret) != SALT_SIZE:
            raise ValueError(f"salt must be {SALT_SIZE} bytes")
        object.__setattr__(self, "digest", crypto.hash(self.secret))

    @classmethod
    def fresh(cls, rng=None) -> Salt:
        return cls(_randbytes(SALT_SIZE, rng))


@dataclass(frozen=True)
class SaltedHashCommitment:
    """Two-leaf tree binding ``leaf`` (an entry digest or nonce digest) to a salt.

    Only ``root`` is ever shown to a limiter or collector.
    """

    root: bytes
    leaf: bytes
    salt_digest: bytes


def shc_root(leaf: bytes, salt_digest: bytes) -> bytes:
    return crypto.hash_concat(leaf, salt_digest)


def make_shc(leaf: bytes, rng=None, salt: Salt | None = None) -> tuple[SaltedHashCommitment, Salt]:
    if not crypto.is_digest(leaf):
        raise ValueError("commitment leaf must be a 32-byte digest")
    salt = salt or Salt.fresh(rng)
    commitment = SaltedHashCommitment(shc_root(leaf, salt.digest), leaf, salt.digest)
    return commitment, salt


def open_shc(c: SaltedHashCommitment | bytes, leaf: bytes, salt_digest: bytes) -> bool:
    root = c.root if isinstance(c, SaltedHashCommitment) else c
    return shc_root(leaf, salt_digest) == root


class NonceKind(enum.Enum):
    RANDOM = "random"
    KEYED = "keyed"


@dataclass(frozen=True)
class Nonce:
    """A token nonce. Keyed nonces carry the secret key that signs spent entries."""

    value: bytes
    kind: NonceKind
    secret_key: bytes | None = field(default=None, repr=False)

    @classmethod
    def random(cls, rng=None) -> Nonce:
        return cls(_randbytes(NONCE_SIZE, rng), NonceKind.RANDOM)

    @classmethod
    def keyed(cls, rng=None) -> Nonce:
        kp = crypto.KeyPair.generate(rng)
        return cls(kp.public_key, NonceKind.KEYED, kp.secret_key)

    @property
    def digest(self) -> bytes:
        # for keyed nonces this is hash(public key bytes)
        return crypto.hash(self.value)

    def sign_entry(self, entry: Entry) -> bytes:
        if self.secret_key is None:
            raise ValueError("random nonces cannot sign entries")
        return crypto.sign(self.secret_key, entry.digest)


@dataclass(frozen=True)
class PlainApproval:
    """A bare limiter signature over a submitted digest (naive and shc modes)."""

    signed_digest: bytes
    signature: bytes
    limiter_key: bytes

    def is_valid(self) -> bool:
        return crypto.verify_signature(self.limiter_key, self.signed_digest, self.signature)


@dataclass(frozen=True)
class TimestampedApproval:
    approval_root: bytes
    commitment_root: bytes
    timestamp: int
    signature: bytes
    limiter_key: bytes

    def is_valid(self) -> bool:
        return self.approval_root == approval_root(
            self.commitment_root, self.timestamp
        ) and crypto.verify_signature(self.limiter_key, self.approval_root, self.signature)


def timestamp_digest(timestamp: int) -> bytes:
    return crypto.hash(crypto.encode_int(timestamp))


def approval_root(c_root: bytes, timestamp: int) -> bytes:
    return crypto.hash_concat(c_root, timestamp_digest(timestamp))


def make_timestamped_approval(c_root: bytes, now: int, keys: crypto.KeyPair) -> TimestampedApproval:
    a = approval_root(c_root, now)
    return TimestampedApproval(
        approval_root=a,
        commitment_root=c_root,
        timestamp=now,
        signature=keys.sign(a),
        limiter_key=keys.public_key,
    )
