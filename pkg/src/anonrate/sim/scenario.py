"""Scenario configuration: a YAML document with nested sections.

Unknown keys are configuration errors so that a typo never silently falls
back to a default.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml


class ScenarioError(ValueError):
    pass


MODES = ("naive", "shc", "timestamped", "token-h", "token-k", "token-open", "federated", "collector")
TOKEN_MODES = ("token-h", "token-k", "token-open")
TIMED_MODES = ("timestamped", "federated") + TOKEN_MODES
ATTACKS = ("hoard", "rotation", "frontrun", "doublespend")
POLICIES = ("first-wins", "greater-hash-wins", "annihilate")

ASSERTION_KEYS = {
    "consistency": bool,
    "rate_sound": bool,
    "content_blind": bool,
    "max_linkage_rate": float,
    "min_linkage_rate": float,
    "max_stale_accepted": int,
    "min_attacker_accepted": int,
    "max_attacker_accepted": int,
    "max_honest_latency": int,
    "min_honest_accepted_fraction": float,
    "max_entries_per_block": int,
    "min_amplification": float,
    "max_amplification": float,
}


@dataclass
class UserConfig:
    count: int = 4
    schedule: str = "periodic"  # periodic | random
    period: int | None = None  # defaults to the limiter period
    offset_spread: int = 0
    activity: float = 0.1
    publish_delay: int = 1
    start: int = 0


@dataclass
class LimiterConfig:
    period: int = 10
    capacity: int = 1
    global_cap: int | None = None
    validators: int = 1
    coordination: str = "independent"


@dataclass
class PeerSetConfig:
    count: int = 3
    policy: str | list[str] = "first-wins"
    queue_capacity: int = 64
    tick_budget: int = 4
    max_age: int | None = None
    staleness: str = "feed"

    def policy_for(self, index: int) -> str:
        if isinstance(self.policy, list):
            return self.policy[index]
        return self.policy


@dataclass
class NetworkConfig:
    delay: int = 1
    jitter: int = 0


@dataclass
class LedgerConfig:
    block_interval: int = 12
    max_appends: int = 2
    depth: int = 3
    seal_timeout: int | None = 5


@dataclass
class AttackerConfig:
    kind: str
    start: int = 0
    burst_tick: int | None = None
    targets: list[int] | None = None
    delay: int = 0
    orders: list[list[int]] | None = None
    spend_tick: int | None = None
    gap: int = 0


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    mode: str = "timestamped"
    duration: int = 100
    dt: int | None = None
    settle: bool = True
    users: UserConfig = field(default_factory=UserConfig)
    limiter: LimiterConfig = field(default_factory=LimiterConfig)
    peers: PeerSetConfig = field(default_factory=PeerSetConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ledger: LedgerConfig = field(default_factory=LedgerConfig)
    attacker: AttackerConfig | None = None
    assertions: dict = field(default_factory=dict)

    @property
    def dt_bound(self) -> int:
        # dT := T_l is the safe default
        return self.limiter.period if self.dt is None else self.dt

    @property
    def max_age(self) -> int:
        return self.peers.max_age if self.peers.max_age is not None else 10 * self.dt_bound

    @property
    def user_period(self) -> int:
        return self.users.period or self.limiter.period

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> Scenario:
        _check(self.mode in MODES, f"mode must be one of {MODES}, got {self.mode!r}")
        _check(0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer")
        _check(self.duration >= 0, "duration must be non-negative")
        _check(self.dt_bound >= 0, "dt must be non-negative")
        u = self.users
        _check(u.count >= 0, "users.count must be non-negative")
        _check(u.schedule in ("periodic", "random"), "users.schedule must be periodic or random")
        _check(0.0 <= u.activity <= 1.0, "users.activity must be within [0, 1]")
        _check(u.publish_delay >= 0 and u.offset_spread >= 0, "user delays must be non-negative")
        _check(self.user_period >= 1, "users.period must be >= 1")
        lim = self.limiter
        _check(lim.period >= 1 and lim.capacity >= 1, "limiter period and capacity must be >= 1")
        _check(lim.global_cap is None or lim.global_cap >= 1, "limiter.global_cap must be >= 1")
        _check(lim.validators >= 1, "limiter.validators must be >= 1")
        _check(lim.coordination in ("independent", "shared"), "limiter.coordination must be independent or shared")
        _check(self.mode == "federated" or lim.validators == 1, "multiple validators require federated mode")
        p = self.peers
        _check(p.count >= 0, "peers.count must be non-negative")
        _check(p.queue_capacity >= 1 and p.tick_budget >= 1, "peer queue capacity and budget must be >= 1")
        _check(p.staleness in ("feed", "queue"), "peers.staleness must be feed or queue")
        policies = p.policy if isinstance(p.policy, list) else [p.policy]
        _check(all(x in POLICIES for x in policies), f"peer policies must be among {POLICIES}")
        _check(not isinstance(p.policy, list) or len(p.policy) == p.count, "one policy per peer")
        _check(self.network.delay >= 0 and self.network.jitter >= 0, "network delays must be non-negative")
        led = self.ledger
        _check(led.block_interval >= 1 and led.max_appends >= 1, "ledger interval and cap must be >= 1")
        _check(0 <= led.depth <= 16, "ledger.depth must be within [0, 16]")
        a = self.attacker
        if a is not None:
            _check(a.kind in ATTACKS, f"attacker.kind must be one of {ATTACKS}")
            if a.kind == "hoard":
                _check(a.burst_tick is not None, "hoard attacker needs burst_tick")
                _check(self.mode not in ("naive", "collector"), "hoard needs a limiter-approved mode")
            if a.kind == "rotation":
                _check(self.mode == "federated", "rotation attack needs federated mode")
            if a.kind in ("frontrun", "doublespend"):
                _check(self.mode in TOKEN_MODES, f"{a.kind} attack needs a token mode")
            if a.kind == "doublespend":
                _check(a.spend_tick is not None, "doublespend attacker needs spend_tick")
                for order in a.orders or []:
                    _check(sorted(order) == [0, 1], "doublespend orders are permutations of [0, 1]")
                _check(a.orders is None or len(a.orders) == p.count, "one doublespend order per peer")
            for t in a.targets or []:
                _check(0 <= t < p.count, f"attacker target {t} is not a peer index")
        for key, value in self.assertions.items():
            _check(key in ASSERTION_KEYS, f"unknown assertion {key!r}")
            kind = ASSERTION_KEYS[key]
            ok = isinstance(value, bool) if kind is bool else isinstance(value, (int, float)) and not isinstance(value, bool)
            _check(ok, f"assertion {key!r} expects {kind.__name__}")
        return self


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ScenarioError(message)


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ScenarioError(f"{where} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ScenarioError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**data)


_SECTIONS = {
    "users": UserConfig,
    "limiter": LimiterConfig,
    "peers": PeerSetConfig,
    "network": NetworkConfig,
    "ledger": LedgerConfig,
}


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    data = copy.deepcopy(data)
    names = {f.name for f in fields(Scenario)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ScenarioError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {k: v for k, v in data.items() if k not in _SECTIONS and k != "attacker"}
    for key, cls in _SECTIONS.items():
        kwargs[key] = _build(cls, data.get(key), key)
    if data.get("attacker") is not None:
        if "kind" not in data["attacker"]:
            raise ScenarioError("attacker needs a kind")
        kwargs["attacker"] = _build(AttackerConfig, data["attacker"], "attacker")
    if not isinstance(kwargs.get("assertions", {}), dict):
        raise ScenarioError("assertions must be a mapping")
    try:
        scenario = Scenario(**kwargs)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None
    return scenario.validate()


def merge(base: dict, overrides: dict | None) -> dict:
    """Deep-merge ``overrides`` into a copy of ``base``."""
    out = copy.deepcopy(base)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_scenario_dict(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror or exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse scenario {path}: {exc}") from None
    return data


def load_scenario(path: str | Path, overrides: dict | None = None) -> Scenario:
    return scenario_from_dict(merge(load_scenario_dict(path), overrides))


def bundled_names() -> list[str]:
    root = resources.files("anonrate") / "scenarios"
    return sorted(p.name.removesuffix(".yaml") for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_dict(name: str) -> dict:
    path = resources.files("anonrate") / "scenarios" / f"{name}.yaml"
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return yaml.safe_load(path.read_text())


def bundled(name: str, overrides: dict | None = None) -> Scenario:
    return scenario_from_dict(merge(bundled_dict(name), overrides))
