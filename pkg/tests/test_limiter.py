import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from anonrate import crypto
from anonrate.commitments import PlainApproval, TimestampedApproval
from anonrate.limiter import (
    BucketStore,
    ConfigurationError,
    Federation,
    Limiter,
    LimiterRequest,
    Mode,
    Observation,
    RateLimited,
    RatePolicy,
    audit_rate,
    federated_request,
)


class Clock:
    def __init__(self, t=0):
        self.t = t

    def __call__(self):
        return self.t


def make(policy=RatePolicy(10), clock=None, **kw):
    clock = clock or Clock()
    return Limiter(crypto.KeyPair.generate(random.Random(0)), policy, clock, **kw), clock


def digest(i=0):
    return crypto.hash(i.to_bytes(4, "big"))


@pytest.mark.parametrize("kw", [dict(period=0), dict(period=5, capacity=0), dict(period=5, global_cap=0)])
def test_policy_validation(kw):
    with pytest.raises(ConfigurationError):
        RatePolicy(**kw)


def test_modes_return_matching_approvals():
    lim, clock = make(RatePolicy(1))
    for i, mode in enumerate(Mode):
        clock.t = 10 * i
        result = lim.request_approval(f"u{i}", digest(i), mode)
        if mode in (Mode.NAIVE, Mode.SHC):
            assert isinstance(result, PlainApproval)
        else:
            assert isinstance(result, TimestampedApproval) and result.timestamp == clock.t
        assert result.is_valid()


def test_retry_after_and_refill():
    lim, clock = make(RatePolicy(10))
    assert not isinstance(lim.request_approval("u", digest(), "shc"), RateLimited)
    clock.t = 4
    limited = lim.request_approval("u", digest(1), "shc")
    assert limited == RateLimited(6)
    clock.t = 10
    assert not isinstance(lim.request_approval("u", digest(2), "shc"), RateLimited)


def test_global_cap():
    lim, clock = make(RatePolicy(10, global_cap=2))
    assert not isinstance(lim.request_approval("a", digest(), "shc"), RateLimited)
    assert not isinstance(lim.request_approval("b", digest(), "shc"), RateLimited)
    assert lim.request_approval("c", digest(), "shc").reason == "global"


def test_challenge_hook():
    lim, _ = make(admit=lambda who: who != "bot")
    assert lim.request_approval("bot", digest(), "shc").reason == "challenge"
    assert not lim.log


def test_rejects_non_digest():
    lim, _ = make()
    with pytest.raises(ValueError):
        lim.request_approval("u", b"short", "shc")


def test_two_users_bucket_arithmetic():
    # capacity 1, period 60, 120 ticks: each user gets an approval at t=0 and t=60 only
    lim, clock = make(RatePolicy(60))
    for t in range(120):
        clock.t = t
        for user in ("a", "b"):
            lim.request_approval(user, digest(t), "timestamped")
    assert len(lim.log) <= 4
    assert sorted((o.requester, o.timestamp) for o in lim.log) == [("a", 0), ("a", 60), ("b", 0), ("b", 60)]


@given(
    st.integers(min_value=1, max_value=20),
    st.integers(min_value=1, max_value=4),
    st.lists(st.tuples(st.integers(min_value=0, max_value=3), st.integers(min_value=0, max_value=3)), max_size=200),
)
def test_admission_never_violates_audit(period, capacity, schedule):
    lim, clock = make(RatePolicy(period, capacity))
    for gap, who in schedule:
        clock.t += gap
        lim.request_approval(f"u{who}", digest(clock.t), "timestamped")
    assert audit_rate(lim.log, period, capacity) == []


@given(st.integers(min_value=1, max_value=20), st.integers(min_value=1, max_value=4))
def test_greedy_requester_gets_exactly_capacity_per_period(period, capacity):
    lim, clock = make(RatePolicy(period, capacity))
    for t in range(period * 5):
        clock.t = t
        for _ in range(capacity + 1):
            lim.request_approval("u", digest(t), "timestamped")
    assert len(lim.log) == capacity * 5


def test_audit_detects_violation():
    rows = [Observation("u", digest(), t) for t in (0, 5, 9)]
    assert audit_rate(rows, 10, 2) == [("u", 0, 3)]
    assert audit_rate(rows, 5, 2) == []


def test_wire_payload_carries_only_id_and_digest():
    lim, _ = make()
    lim.request_approval("alice", digest(7), Mode.TOKEN)
    req = LimiterRequest.from_bytes(lim.wire_log[0])
    assert req == LimiterRequest("alice", digest(7), Mode.TOKEN)
    assert len(lim.wire_log[0]) == 3 + len("alice") + 32


def test_wire_decoding_errors():
    with pytest.raises(ValueError):
        LimiterRequest.from_bytes(b"\x00")
    with pytest.raises(ValueError):
        LimiterRequest.from_bytes(b"\x00\x00\x01a" + b"\x00" * 31)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_federation_independent_vs_shared(n):
    for coordination, expected in (("independent", n), ("shared", 1)):
        clock = Clock()
        fed = Federation.build(n, RatePolicy(10), clock, coordination, rng=random.Random(n))
        granted = 0
        for k in range(n):
            result = fed.validators[k].request_approval("u", digest(k), "timestamped")
            granted += not isinstance(result, RateLimited)
        assert granted == expected


def test_federation_request_rotates():
    clock = Clock()
    fed = Federation.build(3, RatePolicy(10), clock, "independent", rng=random.Random(1))
    keys = set()
    for _ in range(3):
        keys.add(fed.request("u", digest(), "timestamped").limiter_key)
    assert keys == set(fed.public_keys)
    assert isinstance(fed.request("u", digest(), "timestamped"), RateLimited)


def test_federated_request_checks_declared_coordination():
    clock = Clock()
    store = BucketStore()
    shared = [Limiter(crypto.KeyPair.generate(random.Random(i)), RatePolicy(10), clock, store=store, index=i) for i in range(2)]
    assert not isinstance(federated_request(shared, "u", digest(), "shared"), RateLimited)
    assert isinstance(federated_request(shared, "u", digest(), "shared"), RateLimited)
    with pytest.raises(ConfigurationError):
        federated_request(shared, "u", digest(), "independent")
    with pytest.raises(ConfigurationError):
        Federation([])
