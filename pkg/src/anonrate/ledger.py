"""Mock append-only ledger and the collector that anchors batches on it.

The ledger models a contract whose only state is the list ``D`` of appended
digests, with ``append``/``get`` and an event stream. Appends land in the open
block; ``produce_block`` closes it with the ledger clock as its timestamp.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

from anonrate import crypto
from anonrate.crypto import MerklePath


class LedgerError(Exception):
    pass


class BlockFull(LedgerError):
    pass


class CollectorError(Exception):
    pass


class BatchFull(CollectorError):
    pass


class EmptyBatch(CollectorError):
    pass


class NotSealed(CollectorError):
    pass


@dataclass(frozen=True)
class LedgerEvent:
    kind: str  # "append" or "seal"
    block_index: int
    digest: bytes | None = None
    timestamp: int | None = None

    def to_json(self) -> dict:
        out = {"kind": self.kind, "block": self.block_index}
        if self.digest is not None:
            out["digest"] = self.digest.hex()
        if self.timestamp is not None:
            out["timestamp"] = self.timestamp
        return out


@dataclass
class Block:
    index: int
    digests: list[bytes] = field(default_factory=list)
    timestamp: int | None = None


class Ledger:
    def __init__(self, max_appends_per_block: int = 2, block_interval: int = 12) -> None:
        if max_appends_per_block < 1:
            raise ValueError("max appends per block must be >= 1")
        if block_interval < 1:
            raise ValueError("block interval must be >= 1")
        self.max_appends_per_block = max_appends_per_block
        self.block_interval = block_interval
        self._d: list[bytes] = []
        self._block_of: dict[bytes, int] = {}
        self.blocks: list[Block] = [Block(0)]
        self.events: list[LedgerEvent] = []
        self._subscribers: list[Callable[[LedgerEvent], None]] = []

    @property
    def open_block(self) -> Block:
        return self.blocks[-1]

    def subscribe(self, callback: Callable[[LedgerEvent], None]) -> None:
        self._subscribers.append(callback)

    def _emit(self, event: LedgerEvent) -> None:
        self.events.append(event)
        for callback in self._subscribers:
            callback(event)

    def append(self, digest: bytes) -> int:
        if not crypto.is_digest(digest):
            raise ValueError("ledger only stores 32-byte digests")
        block = self.open_block
        if len(block.digests) >= self.max_appends_per_block:
            raise BlockFull(f"block {block.index} already holds {len(block.digests)} appends")
        block.digests.append(digest)
        self._d.append(digest)
        self._block_of.setdefault(digest, block.index)
        self._emit(LedgerEvent("append", block.index, digest=digest))
        return block.index

    def get(self) -> list[bytes]:
        return list(self._d)

    def produce_block(self, now: int) -> Block:
        block = self.open_block
        block.timestamp = now
        self._emit(LedgerEvent("seal", block.index, timestamp=now))
        self.blocks.append(Block(block.index + 1))
        return block

    def tick(self, now: int) -> Block | None:
        if now > 0 and now % self.block_interval == 0:
            return self.produce_block(now)
        return None

    def block_of(self, digest: bytes) -> int | None:
        return self._block_of.get(digest)

    def export_events(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in self.events)


class LedgerReplica:
    """A peer's copy of ``D`` kept current from ledger events alone."""

    def __init__(self) -> None:
        self.digests: list[bytes] = []
        self._members: dict[bytes, int] = {}
        self._block_times: dict[int, int] = {}

    def apply(self, event: LedgerEvent) -> None:
        if event.kind == "append":
            self.digests.append(event.digest)
            self._members.setdefault(event.digest, event.block_index)
        elif event.kind == "seal":
            self._block_times[event.block_index] = event.timestamp

    __call__ = apply

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._members

    def timestamp_of(self, digest: bytes) -> int | None:
        block = self._members.get(digest)
        return None if block is None else self._block_times.get(block)


@dataclass(frozen=True)
class Receipt:
    batch: int
    index: int


@dataclass(frozen=True)
class SealedBatch:
    batch: int
    root: bytes
    block_index: int
    size: int
    sealed_at: int


class Collector:
    """Batches commitment roots into fixed-depth trees, one ledger append per batch."""

    def __init__(
        self,
        ledger: Ledger,
        depth: int = 3,
        seal_timeout: int | None = None,
        clock: Callable[[], int] = lambda: 0,
    ) -> None:
        if depth < 0:
            raise ValueError("depth must be non-negative")
        self.ledger = ledger
        self.depth = depth
        self.capacity = 1 << depth
        self.seal_timeout = seal_timeout
        self.clock = clock
        self.pending: list[bytes] = []
        self._pending_since: int | None = None
        self._batch = 0
        self._paths: dict[Receipt, tuple[MerklePath, bytes]] = {}
        self.sealed: list[SealedBatch] = []
        self.log: list[tuple[str, bytes, int, int]] = []

    def submit(self, shc_root: bytes, requester: str = "") -> Receipt:
        if not crypto.is_digest(shc_root):
            raise ValueError("collector accepts 32-byte commitment roots only")
        if len(self.pending) >= self.capacity:
            raise BatchFull(f"batch {self._batch} is full ({self.capacity})")
        if not self.pending:
            self._pending_since = self.clock()
        self.pending.append(shc_root)
        self.log.append((requester, shc_root, self.clock(), self._batch))
        return Receipt(self._batch, len(self.pending) - 1)

    def seal(self) -> tuple[bytes, int]:
        if not self.pending:
            raise EmptyBatch("nothing to seal")
        root, paths = crypto.merkle_build(self.pending, self.depth)
        block_index = self.ledger.append(root)  # BlockFull leaves the batch pending
        for i, path in enumerate(paths):
            self._paths[Receipt(self._batch, i)] = (path, root)
        self.sealed.append(SealedBatch(self._batch, root, block_index, len(self.pending), self.clock()))
        self._batch += 1
        self.pending = []
        self._pending_since = None
        return root, block_index

    def redeem(self, receipt: Receipt) -> tuple[MerklePath, bytes]:
        try:
            return self._paths[receipt]
        except KeyError:
            raise NotSealed(f"batch {receipt.batch} has not been sealed") from None

    def due(self, now: int) -> bool:
        if not self.pending:
            return False
        if len(self.pending) >= self.capacity:
            return True
        return self.seal_timeout is not None and now - self._pending_since >= self.seal_timeout

    def tick(self, now: int) -> SealedBatch | None:
        """Seal if full or timed out. Returns the sealed batch, or None."""
        if not self.due(now):
            return None
        try:
            self.seal()
        except BlockFull:
            return None
        return self.sealed[-1]
