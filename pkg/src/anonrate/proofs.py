"""Approval relations and the proof backend interface.

A relation is a predicate over public inputs (what peers see) and a private
witness (what only the prover holds). A backend turns a satisfying
``(public, witness)`` pair into an opaque ``ApprovalProof`` that anyone holding
the verifying context can check against the public inputs alone.

The shipped ``DevelopmentBackend`` is not zero-knowledge in the cryptographic
sense. Its proof blob is a hash over the statement and witness and it keeps a
registry of issued blobs; verification is a registry lookup bound to the exact
public inputs. It preserves message flow, public-input binding and witness
non-leakage so protocol behaviour can be tested; a SNARK backend can replace it
behind the same two methods.
"""
from __future__ import annotations

import enum
import json
import struct
import threading
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Protocol

from anonrate import commitments, crypto
from anonrate.crypto import MerklePath


class ProofError(Exception):
    pass


class ShapeMismatch(ProofError):
    pass


class RelationUnsatisfied(ProofError):
    pass


class WireError(ProofError):
    pass


class Relation(enum.IntEnum):
    SIG = 1
    TIME = 2
    TOK_H = 3
    TOK_K = 4
    INC = 5

    @property
    def label(self) -> str:
        return "R-" + self.name.replace("_", "-")

    @classmethod
    def parse(cls, text: str) -> Relation:
        key = text.upper().removeprefix("R-").replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown relation {text!r}") from None

    @property
    def is_token(self) -> bool:
        return self in (Relation.TOK_H, Relation.TOK_K)


INT_FIELDS = frozenset({"public_timestamp", "dt_bound", "tree_depth", "timestamp"})

PUBLIC_FIELDS: dict[Relation, tuple[str, ...]] = {
    Relation.SIG: ("entry_digest", "limiter_key"),
    Relation.TIME: ("entry_digest", "limiter_key", "public_timestamp", "dt_bound"),
    Relation.TOK_H: ("nonce_digest", "limiter_key", "public_timestamp", "dt_bound", "entry_digest"),
    Relation.TOK_K: ("nonce_public_key", "limiter_key", "public_timestamp", "dt_bound"),
    Relation.INC: ("entry_digest", "collector_root", "tree_depth"),
}

_TIMED_WITNESS = ("salt_digest", "commitment", "approval", "timestamp", "signature")
WITNESS_FIELDS: dict[Relation, tuple[str, ...]] = {
    Relation.SIG: ("salt_digest", "commitment", "signature"),
    Relation.TIME: _TIMED_WITNESS,
    Relation.TOK_H: _TIMED_WITNESS,
    Relation.TOK_K: _TIMED_WITNESS,
    Relation.INC: ("salt_digest", "path"),
}


def _encode_field(name: str, value) -> bytes:
    if name in INT_FIELDS:
        return crypto.encode_int(value)
    if isinstance(value, MerklePath):
        return value.to_bytes()
    return bytes(value)


def _pack(parts: list[bytes]) -> bytes:
    return b"".join(struct.pack(">I", len(p)) + p for p in parts)


@dataclass(frozen=True)
class PublicInputs:
    entry_digest: bytes | None = None
    limiter_key: bytes | None = None
    public_timestamp: int | None = None
    dt_bound: int | None = None
    nonce_digest: bytes | None = None
    nonce_public_key: bytes | None = None
    collector_root: bytes | None = None
    tree_depth: int | None = None

    def check_shape(self, relation: Relation) -> None:
        wanted = PUBLIC_FIELDS[relation]
        present = {f.name for f in fields(self) if getattr(self, f.name) is not None}
        missing = [n for n in wanted if n not in present]
        extra = sorted(present - set(wanted))
        if missing or extra:
            raise ShapeMismatch(
                f"{relation.label} public inputs: missing {missing or '-'}, unexpected {extra or '-'}"
            )

    def encode(self, relation: Relation) -> bytes:
        self.check_shape(relation)
        return _pack([_encode_field(n, getattr(self, n)) for n in PUBLIC_FIELDS[relation]])

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                out[f.name] = value if f.name in INT_FIELDS else value.hex()
        return out

    @classmethod
    def from_json(cls, data: dict) -> PublicInputs:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown public input fields: {sorted(unknown)}")
        return cls(**{k: (int(v) if k in INT_FIELDS else bytes.fromhex(v)) for k, v in data.items()})


@dataclass(frozen=True)
class Witness:
    salt_digest: bytes | None = None
    commitment: bytes | None = None
    approval: bytes | None = None
    timestamp: int | None = None
    signature: bytes | None = None
    path: MerklePath | None = None

    def check_shape(self, relation: Relation) -> None:
        wanted = WITNESS_FIELDS[relation]
        present = {f.name for f in fields(self) if getattr(self, f.name) is not None}
        missing = [n for n in wanted if n not in present]
        extra = sorted(present - set(wanted))
        if missing or extra:
            raise ShapeMismatch(
                f"{relation.label} witness: missing {missing or '-'}, unexpected {extra or '-'}"
            )

    def encode(self, relation: Relation) -> bytes:
        self.check_shape(relation)
        return _pack([_encode_field(n, getattr(self, n)) for n in WITNESS_FIELDS[relation]])

    def secret_values(self) -> list[bytes]:
        """Byte-string witness values, used by leakage scans."""
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bytes):
                out.append(value)
            elif isinstance(value, MerklePath):
                out.extend(step.sibling for step in value)
        return out


def _timed_approval_holds(leaf: bytes, pub: PublicInputs, wit: Witness) -> bool:
    return (
        commitments.open_shc(wit.commitment, leaf, wit.salt_digest)
        and commitments.approval_root(wit.commitment, wit.timestamp) == wit.approval
        and abs(wit.timestamp - pub.public_timestamp) <= pub.dt_bound
        and crypto.verify_signature(pub.limiter_key, wit.approval, wit.signature)
    )


def relation_holds(relation: Relation, pub: PublicInputs, wit: Witness) -> bool:
    pub.check_shape(relation)
    wit.check_shape(relation)
    try:
        return _holds(relation, pub, wit)
    except (ValueError, TypeError, OverflowError):
        return False


def _holds(relation: Relation, pub: PublicInputs, wit: Witness) -> bool:
    if relation is Relation.SIG:
        return commitments.open_shc(
            wit.commitment, pub.entry_digest, wit.salt_digest
        ) and crypto.verify_signature(pub.limiter_key, wit.commitment, wit.signature)
    if relation is Relation.TIME:
        return _timed_approval_holds(pub.entry_digest, pub, wit)
    if relation is Relation.TOK_H:
        # entry_digest is bound by the proof, not constrained by the witness
        return _timed_approval_holds(pub.nonce_digest, pub, wit)
    if relation is Relation.TOK_K:
        return _timed_approval_holds(crypto.hash(pub.nonce_public_key), pub, wit)
    if relation is Relation.INC:
        if len(wit.path) != pub.tree_depth:
            return False
        leaf = commitments.shc_root(pub.entry_digest, wit.salt_digest)
        return crypto.merkle_verify(leaf, wit.path, pub.collector_root)
    raise ShapeMismatch(f"unknown relation {relation!r}")


@dataclass(frozen=True)
class ApprovalProof:
    relation: Relation
    public_inputs: PublicInputs
    blob: bytes

    def to_bytes(self) -> bytes:
        """relation byte, u32-length-prefixed public fields in canonical order, u32-length-prefixed blob."""
        return bytes([self.relation]) + self.public_inputs.encode(self.relation) + _pack([self.blob])

    @classmethod
    def from_bytes(cls, data: bytes) -> ApprovalProof:
        if not data:
            raise WireError("empty proof encoding")
        try:
            relation = Relation(data[0])
        except ValueError:
            raise WireError(f"unknown relation id {data[0]}") from None
        parts = []
        off = 1
        for _ in range(len(PUBLIC_FIELDS[relation]) + 1):
            if off + 4 > len(data):
                raise WireError("truncated length prefix")
            (n,) = struct.unpack_from(">I", data, off)
            off += 4
            if off + n > len(data):
                raise WireError("truncated field")
            parts.append(data[off : off + n])
            off += n
        if off != len(data):
            raise WireError(f"{len(data) - off} trailing bytes")
        values = {}
        for name, raw in zip(PUBLIC_FIELDS[relation], parts):
            try:
                values[name] = crypto.decode_int(raw) if name in INT_FIELDS else raw
            except ValueError as exc:
                raise WireError(str(exc)) from None
        return cls(relation, PublicInputs(**values), parts[-1])

    def to_json(self) -> dict:
        return {
            "relation": self.relation.label,
            "public_inputs": self.public_inputs.to_json(),
            "blob": self.blob.hex(),
        }

    @classmethod
    def from_json(cls, data: dict) -> ApprovalProof:
        return cls(
            Relation.parse(data["relation"]),
            PublicInputs.from_json(data["public_inputs"]),
            bytes.fromhex(data["blob"]),
        )


class ProofBackend(Protocol):
    name: str

    def prove(self, relation: Relation, pub: PublicInputs, wit: Witness) -> ApprovalProof: ...

    def verify(self, proof: ApprovalProof) -> bool: ...


_BLOB_TAG = b"anonrate/dev-proof/v1"
_STATEMENT_TAG = b"anonrate/dev-statement/v1"


def _statement_digest(relation: Relation, pub: PublicInputs) -> bytes:
    return crypto.hash(_STATEMENT_TAG + bytes([relation]) + pub.encode(relation))


class DevelopmentBackend:
    """Witness-checking prover plus a registry-holding verification oracle."""

    name = "development"

    def __init__(self, registry_path: str | Path | None = None) -> None:
        self._registry: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self.registry_path = Path(registry_path) if registry_path else None
        if self.registry_path and self.registry_path.exists():
            raw = json.loads(self.registry_path.read_text())
            self._registry = {bytes.fromhex(k): bytes.fromhex(v) for k, v in raw.items()}

    def __len__(self) -> int:
        return len(self._registry)

    def prove(self, relation: Relation, pub: PublicInputs, wit: Witness) -> ApprovalProof:
        if not relation_holds(relation, pub, wit):
            raise RelationUnsatisfied(f"{relation.label} does not hold for the given witness")
        public = pub.encode(relation)
        blob = crypto.hash(_BLOB_TAG + bytes([relation]) + public + wit.encode(relation))
        with self._lock:
            self._registry[blob] = _statement_digest(relation, pub)
        return ApprovalProof(relation, pub, blob)

    def verify(self, proof: ApprovalProof) -> bool:
        try:
            statement = _statement_digest(proof.relation, proof.public_inputs)
        except (ShapeMismatch, ValueError, TypeError, AttributeError):
            return False
        return self._registry.get(proof.blob) == statement

    def save(self, path: str | Path | None = None) -> None:
        path = Path(path) if path else self.registry_path
        if path is None:
            raise ValueError("no registry path configured")
        with self._lock:
            data = {k.hex(): v.hex() for k, v in sorted(self._registry.items())}
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def prove(relation: Relation, pub: PublicInputs, wit: Witness, backend: ProofBackend) -> ApprovalProof:
    return backend.prove(relation, pub, wit)


def verify(proof: ApprovalProof, backend: ProofBackend) -> bool:
    try:
        return bool(backend.verify(proof))
    except ProofError:
        return False
