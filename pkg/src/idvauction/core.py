"""Signals, valuation oracles, query accounting, instances and outcomes."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

SignalProfile = tuple  # tuple[float, ...], one entry per agent in [0, 1]

ValueFn = Callable[[SignalProfile], float]
FamilyBuilder = Callable[[Mapping[str, Any], int], ValueFn]

_FAMILIES: dict[str, FamilyBuilder] = {}


def register_family(kind: str) -> Callable[[FamilyBuilder], FamilyBuilder]:
    """Register a builder turning ``(params, own_index)`` into a value function."""

    def deco(builder: FamilyBuilder) -> FamilyBuilder:
        _FAMILIES[kind] = builder
        return builder

    return deco


def family_kinds() -> list[str]:
    _load_families()
    return sorted(_FAMILIES)


def _load_families() -> None:
    # valuations registers the concrete families on import
    from . import valuations  # noqa: F401


def make_profile(values: Iterable[float], n: int | None = None) -> SignalProfile:
    """Validate and freeze a signal profile."""
    profile = tuple(float(v) for v in values)
    if n is not None and len(profile) != n:
        raise ValueError(f"profile has length {len(profile)}, expected {n}")
    for v in profile:
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"signal {v!r} outside [0, 1]")
    return profile


def substitute(profile: SignalProfile, index: int, value: float) -> SignalProfile:
    """Return ``profile`` with coordinate ``index`` replaced by ``value``."""
    if not 0 <= index < len(profile):
        raise IndexError(f"agent index {index} out of range for n={len(profile)}")
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"signal {value!r} outside [0, 1]")
    return profile[:index] + (value,) + profile[index + 1:]


@dataclass(frozen=True)
class ValuationOracle:
    """Black-box valuation ``v_i`` of agent ``own_index``.

    The family/params pair is the serializable description; the callable is
    rebuilt from it, so an oracle can always be replayed from JSON.
    """

    family: str
    params: Mapping[str, Any]
    own_index: int
    deps: frozenset[int] | None = None
    _fn: ValueFn = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        _load_families()
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown valuation family {self.family!r}")
        if self.own_index < 0:
            raise ValueError("own_index must be non-negative")
        if self.deps is not None:
            deps = frozenset(int(j) for j in self.deps)
            if self.own_index in deps:
                raise ValueError(f"agent {self.own_index} lists itself as a dependency")
            if any(j < 0 for j in deps):
                raise ValueError("dependency indices must be non-negative")
            object.__setattr__(self, "deps", deps)
        object.__setattr__(self, "_fn", _FAMILIES[self.family](self.params, self.own_index))

    def __call__(self, profile: SignalProfile) -> float:
        return self._fn(profile)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "params": _jsonable(self.params),
            "deps": None if self.deps is None else sorted(self.deps),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], own_index: int) -> ValuationOracle:
        deps = data.get("deps")
        return cls(
            family=data["family"],
            params=data.get("params", {}),
            own_index=own_index,
            deps=None if deps is None else frozenset(deps),
        )


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, frozenset):
        return sorted(obj)
    return obj


class QueryLedger:
    """Per-agent count of distinct profiles at which an oracle was queried.

    Doubles as a memo table: repeated queries return the stored value and are
    not counted again.
    """

    def __init__(self) -> None:
        self._memo: dict[int, dict[SignalProfile, float]] = defaultdict(dict)

    def query(self, oracle: ValuationOracle, profile: SignalProfile) -> float:
        seen = self._memo[oracle.own_index]
        try:
            return seen[profile]
        except KeyError:
            value = oracle(profile)
            seen[profile] = value
            return value

    def count(self, agent: int) -> int:
        return len(self._memo.get(agent, ()))

    def counts(self, n: int) -> list[int]:
        return [self.count(i) for i in range(n)]

    def profiles(self, agent: int) -> list[SignalProfile]:
        return list(self._memo.get(agent, ()))


def evaluate(oracle: ValuationOracle, profile: Sequence[float], ledger: QueryLedger | None = None) -> float:
    """Evaluate ``oracle`` at ``profile``, recording the query in ``ledger``."""
    if not isinstance(profile, tuple):
        profile = make_profile(profile)
    else:
        for v in profile:
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"signal {v!r} outside [0, 1]")
    if oracle.own_index >= len(profile):
        raise ValueError(f"profile of length {len(profile)} too short for agent {oracle.own_index}")
    if ledger is None:
        return oracle(profile)
    return ledger.query(oracle, profile)


@dataclass(frozen=True)
class Instance:
    """Reported (or true) valuations together with a signal profile."""

    oracles: tuple[ValuationOracle, ...]
    signals: SignalProfile

    def __post_init__(self) -> None:
        oracles = tuple(self.oracles)
        n = len(oracles)
        if n < 1:
            raise ValueError("an instance needs at least one agent")
        object.__setattr__(self, "oracles", oracles)
        object.__setattr__(self, "signals", make_profile(self.signals, n))
        for i, oracle in enumerate(oracles):
            if oracle.own_index != i:
                raise ValueError(f"oracle at position {i} has own_index {oracle.own_index}")
            if oracle.deps is not None and any(j >= n for j in oracle.deps):
                raise ValueError(f"agent {i} declares a dependency outside [0, {n})")

    @property
    def n(self) -> int:
        return len(self.oracles)

    def value(self, i: int, ledger: QueryLedger | None = None) -> float:
        return evaluate(self.oracles[i], self.signals, ledger)

    def values(self, ledger: QueryLedger | None = None) -> list[float]:
        return [self.value(i, ledger) for i in range(self.n)]

    def replace_agent(self, i: int, oracle: ValuationOracle, signal: float) -> Instance:
        """Instance where agent ``i`` reports ``(oracle, signal)`` instead."""
        oracles = list(self.oracles)
        oracles[i] = oracle
        return Instance(tuple(oracles), substitute(self.signals, i, signal))

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "agents": [o.to_dict() for o in self.oracles],
            "signals": list(self.signals),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Instance:
        agents = data["agents"]
        if "n" in data and data["n"] != len(agents):
            raise ValueError(f"n={data['n']} but {len(agents)} agents listed")
        oracles = tuple(ValuationOracle.from_dict(a, i) for i, a in enumerate(agents))
        return cls(oracles, tuple(data["signals"]))

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> Instance:
        return cls.from_dict(json.loads(text))


@dataclass
class MechanismOutcome:
    x: list[float]
    p: list[float]
    ledger: QueryLedger
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.x)

    def to_dict(self) -> dict[str, Any]:
        return {
            "x": list(self.x),
            "p": list(self.p),
            "sum_x": math.fsum(self.x),
            "queries": self.ledger.counts(self.n),
            "diagnostics": _jsonable(self.diagnostics),
        }


def dumps(obj: Any) -> str:
    """JSON with round-trip floats and a stable layout."""
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"
