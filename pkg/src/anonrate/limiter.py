"""The rate-limiter actor.

A limiter sees an opaque requester id and a 32-byte digest, applies its rate
policy and answers with a signature (naive/shc modes) or a timestamped approval
(timestamped/token modes). In every mode except naive the digest is a
commitment root, so the limiter's observation log never holds entry data.

The per-requester bucket holds ``capacity`` tokens and each spent token comes
back exactly ``period`` seconds after it was spent. This makes the admission
rule identical to the audit rule: at most ``capacity`` approvals in any
half-open window ``[t, t + period)``.
"""
from __future__ import annotations

import enum
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable

from anonrate import commitments, crypto
from anonrate.commitments import PlainApproval, TimestampedApproval


class ConfigurationError(ValueError):
    pass


class Mode(enum.Enum):
    NAIVE = "naive"
    SHC = "shc"
    TIMESTAMPED = "timestamped"
    TOKEN = "token"

    @property
    def wire_id(self) -> int:
        return list(Mode).index(self)


class Coordination(enum.Enum):
    INDEPENDENT = "independent"
    SHARED = "shared"


@dataclass(frozen=True)
class RatePolicy:
    period: int
    capacity: int = 1
    global_cap: int | None = None

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ConfigurationError(f"period must be positive, got {self.period}")
        if self.capacity < 1:
            raise ConfigurationError(f"capacity must be >= 1, got {self.capacity}")
        if self.global_cap is not None and self.global_cap < 1:
            raise ConfigurationError(f"global cap must be >= 1, got {self.global_cap}")


@dataclass(frozen=True)
class RateLimited:
    retry_after: int
    reason: str = "requester"


@dataclass(frozen=True)
class Observation:
    """One row of what the limiter learns from a request it approved."""

    requester: str
    digest: bytes
    timestamp: int
    validator: int = 0


@dataclass(frozen=True)
class LimiterRequest:
    requester: str
    digest: bytes
    mode: Mode

    def to_bytes(self) -> bytes:
        rid = self.requester.encode()
        return struct.pack(">BH", self.mode.wire_id, len(rid)) + rid + self.digest

    @classmethod
    def from_bytes(cls, data: bytes) -> LimiterRequest:
        if len(data) < 3:
            raise ValueError("truncated limiter request")
        mode_id, n = struct.unpack_from(">BH", data)
        if len(data) != 3 + n + crypto.DIGEST_SIZE:
            raise ValueError("bad limiter request length")
        return cls(data[3 : 3 + n].decode(), data[3 + n :], list(Mode)[mode_id])


class BucketStore:
    """Spent-token timestamps per requester, plus a global log for the optional cap."""

    def __init__(self) -> None:
        self._spent: dict[str, deque[int]] = defaultdict(deque)
        self._global: deque[int] = deque()

    @staticmethod
    def _expire(log: deque[int], now: int, period: int) -> None:
        while log and log[0] + period <= now:
            log.popleft()

    def check(self, requester: str, now: int, policy: RatePolicy) -> RateLimited | None:
        log = self._spent[requester]
        self._expire(log, now, policy.period)
        if len(log) >= policy.capacity:
            return RateLimited(log[0] + policy.period - now)
        if policy.global_cap is not None:
            self._expire(self._global, now, policy.period)
            if len(self._global) >= policy.global_cap:
                return RateLimited(self._global[0] + policy.period - now, reason="global")
        return None

    def debit(self, requester: str, now: int) -> None:
        self._spent[requester].append(now)
        self._global.append(now)


def _always_pass(requester: str) -> bool:
    return True


class Limiter:
    def __init__(
        self,
        keys: crypto.KeyPair,
        policy: RatePolicy,
        clock: Callable[[], int],
        *,
        store: BucketStore | None = None,
        admit: Callable[[str], bool] = _always_pass,
        index: int = 0,
    ) -> None:
        self.keys = keys
        self.policy = policy
        self.clock = clock
        self.store = store if store is not None else BucketStore()
        self.admit = admit  # captcha / identity hook
        self.index = index
        self.log: list[Observation] = []
        self.wire_log: list[bytes] = []

    @property
    def public_key(self) -> bytes:
        return self.keys.public_key

    def request_approval(
        self, requester: str, c_root: bytes, mode: Mode | str
    ) -> PlainApproval | TimestampedApproval | RateLimited:
        mode = Mode(mode)
        if not crypto.is_digest(c_root):
            raise ValueError("submitted digest must be 32 bytes")
        self.wire_log.append(LimiterRequest(requester, c_root, mode).to_bytes())

        now = self.clock()
        if not self.admit(requester):
            return RateLimited(self.policy.period, reason="challenge")
        limited = self.store.check(requester, now, self.policy)
        if limited is not None:
            return limited

        self.store.debit(requester, now)
        self.log.append(Observation(requester, c_root, now, self.index))
        if mode in (Mode.NAIVE, Mode.SHC):
            return PlainApproval(c_root, self.keys.sign(c_root), self.public_key)
        return commitments.make_timestamped_approval(c_root, now, self.keys)

    def limiter_log_view(self) -> list[Observation]:
        return list(self.log)


@dataclass
class Federation:
    """A fixed validator set; ``SHARED`` validators consult one bucket store."""

    validators: list[Limiter]
    coordination: Coordination = field(default=Coordination.INDEPENDENT)

    def __post_init__(self) -> None:
        if not self.validators:
            raise ConfigurationError("a federation needs at least one validator")
        self.coordination = Coordination(self.coordination)

    @classmethod
    def build(
        cls,
        n: int,
        policy: RatePolicy,
        clock: Callable[[], int],
        coordination: Coordination | str = Coordination.INDEPENDENT,
        rng=None,
    ) -> Federation:
        if n < 1:
            raise ConfigurationError("a federation needs at least one validator")
        coordination = Coordination(coordination)
        shared = BucketStore() if coordination is Coordination.SHARED else None
        validators = [
            Limiter(crypto.KeyPair.generate(rng), policy, clock, store=shared, index=i)
            for i in range(n)
        ]
        return cls(validators, coordination)

    @property
    def public_keys(self) -> list[bytes]:
        return [v.public_key for v in self.validators]

    def request(self, requester: str, c_root: bytes, mode: Mode | str = Mode.TIMESTAMPED, start: int = 0):
        """Try validators in rotation from ``start``; first approval wins."""
        n = len(self.validators)
        refusals = []
        for k in range(n):
            result = self.validators[(start + k) % n].request_approval(requester, c_root, mode)
            if not isinstance(result, RateLimited):
                return result
            refusals.append(result)
        return min(refusals, key=lambda r: r.retry_after)

    def log_view(self) -> list[Observation]:
        rows = [obs for v in self.validators for obs in v.log]
        return sorted(rows, key=lambda o: (o.timestamp, o.validator))


def federated_request(
    validators: list[Limiter],
    requester: str,
    c_root: bytes,
    coordination: Coordination | str,
    mode: Mode | str = Mode.TIMESTAMPED,
):
    """One request against an existing validator list.

    The caller decides whether the validators share a ``BucketStore``; this
    only checks that the declared coordination matches how they were built.
    """
    fed = Federation(list(validators), Coordination(coordination))
    stores = {id(v.store) for v in fed.validators}
    if fed.coordination is Coordination.SHARED and len(stores) != 1:
        raise ConfigurationError("shared coordination requires one bucket store")
    if fed.coordination is Coordination.INDEPENDENT and len(fed.validators) > 1 and len(stores) == 1:
        raise ConfigurationError("independent validators must not share a bucket store")
    return fed.request(requester, c_root, mode)


def audit_rate(observations: list[Observation], period: int, capacity: int) -> list[tuple[str, int, int]]:
    """Sliding-window audit. Returns (requester, window_start, count) for every violation."""
    by_requester: dict[str, list[int]] = defaultdict(list)
    for obs in observations:
        by_requester[obs.requester].append(obs.timestamp)
    violations = []
    for requester, times in sorted(by_requester.items()):
        times.sort()
        lo = 0
        for hi, t in enumerate(times):
            while times[lo] + period <= t:
                lo += 1
            count = hi - lo + 1
            if count > capacity:
                violations.append((requester, times[lo], count))
    return violations
