"""Concrete valuation families, grid-based SOS / single-crossing checks, fixtures."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from operator import mul
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core import Instance, ValuationOracle, register_family

DEFAULT_EPS = 1e-6
GRID_GUARD = 10**6

# Families whose members are submodular over signals for every valid parameter choice.
SOS_FAMILIES = frozenset({"weighted_sum", "mineral_rights_average", "max_of_signals", "concave_of_sum", "affine_own"})


class InstanceTooLarge(ValueError):
    """Raised when an exhaustive grid check would exceed the enumeration guard."""


def _weights(params: Mapping[str, Any], own: int) -> tuple[float, ...]:
    w = tuple(float(x) for x in params["weights"])
    if own >= len(w):
        raise ValueError(f"weights of length {len(w)} do not cover agent {own}")
    if any(x < 0 or not math.isfinite(x) for x in w):
        raise ValueError("weights must be finite and non-negative")
    if w[own] <= 0:
        raise ValueError("own weight must be positive")
    return w


def _eps(params: Mapping[str, Any]) -> float:
    eps = float(params.get("eps", DEFAULT_EPS))
    if not eps > 0:
        raise ValueError("eps must be positive")
    return eps


@register_family("weighted_sum")
def _weighted_sum(params, own):
    w = _weights(params, own)
    return lambda s: math.fsum(map(mul, w, s))


@register_family("mineral_rights_average")
def _mineral_rights(params, own):
    eps = _eps(params)
    return lambda s: math.fsum(s) / len(s) + eps * s[own]


@register_family("max_of_signals")
def _max_of_signals(params, own):
    eps = _eps(params)
    members = params.get("members")
    if members is None:
        return lambda s: max(s) + eps * s[own]
    members = tuple(int(j) for j in members)
    if not members:
        raise ValueError("max_of_signals needs at least one member")
    return lambda s: max(s[j] for j in members) + eps * s[own]


@register_family("concave_of_sum")
def _concave_of_sum(params, own):
    w = _weights(params, own)
    gamma = float(params.get("gamma", 0.5))
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    return lambda s: math.fsum(map(mul, w, s)) ** gamma


@register_family("quadratic_of_sum")
def _quadratic_of_sum(params, own):
    # S + beta*S^2 with S the weighted sum: d-SOS with d = 1 + 2*beta*sum(w)
    w = _weights(params, own)
    beta = float(params.get("beta", 0.0))
    if beta < 0:
        raise ValueError("beta must be non-negative")

    def fn(s):
        total = math.fsum(map(mul, w, s))
        return total + beta * total * total

    return fn


@register_family("product")
def _product(params, own):
    eps = _eps(params)
    members = params.get("members")
    if members is None:
        return lambda s: math.prod(s) + eps * s[own]
    members = tuple(int(j) for j in members)
    return lambda s: math.prod(s[j] for j in members) + eps * s[own]


@register_family("affine_own")
def _affine_own(params, own):
    a = float(params.get("a", 0.0))
    b = float(params.get("b", 1.0))
    if a < 0 or not b > 0:
        raise ValueError("affine_own needs a >= 0 and b > 0")
    return lambda s: a + b * s[own]


@register_family("custom_table")
def _custom_table(params, own):
    g = int(params["grid_points"])
    values = np.asarray(params["values"], dtype=float)
    n = round(math.log(values.size, g)) if values.size > 1 else 1
    if g < 2 or g**n != values.size:
        raise ValueError("custom_table values must have grid_points**n entries")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("custom_table values must be finite and non-negative")
    axis = np.linspace(0.0, 1.0, g)
    interp = RegularGridInterpolator((axis,) * n, values.reshape((g,) * n), method="linear")
    return lambda s: float(interp([s])[0])


@register_family("transformed")
def _transformed(params, own):
    base = ValuationOracle(params["base"]["family"], params["base"].get("params", {}), own)
    scale = float(params.get("scale", 1.0))
    shift = float(params.get("shift", 0.0))
    if not scale > 0:
        raise ValueError("scale must be positive")
    return lambda s: max(scale * base(s) + shift, 0.0)


def natural_deps(family: str, params: Mapping[str, Any], own: int, n: int) -> frozenset[int]:
    """Agents whose signals the family can actually depend on (excluding ``own``)."""
    others = frozenset(range(n)) - {own}
    if family in ("weighted_sum", "concave_of_sum", "quadratic_of_sum"):
        return frozenset(j for j, w in enumerate(params["weights"]) if w != 0 and j != own)
    if family in ("product", "max_of_signals"):
        members = params.get("members")
        return others if members is None else frozenset(int(j) for j in members) - {own}
    if family == "affine_own":
        return frozenset()
    if family == "transformed":
        return natural_deps(params["base"]["family"], params["base"].get("params", {}), own, n)
    return others


def make_oracle(family: str, params: Mapping[str, Any], own: int, n: int, deps: Any = "auto") -> ValuationOracle:
    if isinstance(deps, str) and deps == "auto":
        deps = natural_deps(family, params, own, n)
    return ValuationOracle(family, dict(params), own, None if deps is None else frozenset(deps))


# --------------------------------------------------------------------------- checks


@dataclass
class CheckReport:
    holds: bool
    grid_resolution: int
    witness: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"holds": self.holds, "grid_resolution": self.grid_resolution, "witness": self.witness}


def grid_axis(grid_points: int) -> list[float]:
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    return [k / (grid_points - 1) for k in range(grid_points)]


def grid_table(oracle: Callable[[tuple], float], n: int, grid_points: int) -> np.ndarray:
    """Oracle values on the full ``grid_points**n`` grid, indexed by grid coordinates."""
    if grid_points**n > GRID_GUARD:
        raise InstanceTooLarge(f"instance too large for exhaustive check: {grid_points}**{n} > {GRID_GUARD}")
    axis = grid_axis(grid_points)
    vals = [oracle(p) for p in itertools.product(axis, repeat=n)]
    return np.asarray(vals, dtype=float).reshape((grid_points,) * n)


def _up_set_max(arr: np.ndarray) -> np.ndarray:
    # out[s] = max over s' >= s (coordinatewise) of arr[s']
    out = arr.copy()
    for ax in range(arr.ndim):
        flipped = np.flip(out, axis=ax)
        out = np.flip(np.maximum.accumulate(flipped, axis=ax), axis=ax)
    return out


def _profile(axis: Sequence[float], idx: Sequence[int]) -> list[float]:
    return [axis[k] for k in idx]


def check_sos(oracle: ValuationOracle, n: int, grid_points: int, d: float = 1.0, tol: float = 1e-12) -> CheckReport:
    """Exhaustive grid check of submodularity over signals (``d``-SOS when d > 1).

    For every coordinate, every grid pair ``s_i < s_i + delta`` and every pair of
    dominated grid profiles ``s_-i <= s'_-i``, requires
    ``d * marginal(s_-i) >= marginal(s'_-i)``.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    table = grid_table(oracle, n, grid_points)
    axis = grid_axis(grid_points)
    slack = tol * max(1.0, float(np.max(np.abs(table))))
    for i in range(n):
        for a, b in itertools.combinations(range(grid_points), 2):
            marg = np.take(table, b, axis=i) - np.take(table, a, axis=i)
            upper = _up_set_max(marg)
            bad = d * marg < upper - slack
            if not bad.any():
                continue
            low = tuple(int(k) for k in np.argwhere(bad)[0])
            dominating = np.argwhere(
                np.all(np.indices(marg.shape).reshape(marg.ndim, -1).T >= np.array(low), axis=1).reshape(marg.shape)
                & (marg == upper[low])
            )
            high = tuple(int(k) for k in dominating[0])
            lo_full = list(low[:i]) + [a] + list(low[i:])
            hi_full = list(high[:i]) + [a] + list(high[i:])
            witness = {
                "coordinate": i,
                "s_i": axis[a],
                "delta": axis[b] - axis[a],
                "profile_low": _profile(axis, lo_full),
                "profile_high": _profile(axis, hi_full),
                "marginal_low": float(marg[low]),
                "marginal_high": float(marg[high]),
                "d": d,
            }
            return CheckReport(False, grid_points, witness)
    return CheckReport(True, grid_points)


def check_single_crossing(oracles: Sequence[ValuationOracle], grid_points: int, tol: float = 1e-12) -> CheckReport:
    """Grid check that each agent's own-signal marginal dominates every rival's."""
    n = len(oracles)
    if n == 1:
        grid_axis(grid_points)
        return CheckReport(True, grid_points)
    tables = [grid_table(o, n, grid_points) for o in oracles]
    axis = grid_axis(grid_points)
    slack = tol * max(1.0, max(float(np.max(np.abs(t))) for t in tables))
    for i in range(n):
        for a, b in itertools.combinations(range(grid_points), 2):
            own = np.take(tables[i], b, axis=i) - np.take(tables[i], a, axis=i)
            for j in range(n):
                if j == i:
                    continue
                other = np.take(tables[j], b, axis=i) - np.take(tables[j], a, axis=i)
                bad = own < other - slack
                if bad.any():
                    rest = tuple(int(k) for k in np.argwhere(bad)[0])
                    full = list(rest[:i]) + [a] + list(rest[i:])
                    witness = {
                        "i": i,
                        "j": j,
                        "profile": _profile(axis, full),
                        "delta": axis[b] - axis[a],
                        "marginal_i": float(own[rest]),
                        "marginal_j": float(other[rest]),
                    }
                    return CheckReport(False, grid_points, witness)
    return CheckReport(True, grid_points)


def check_monotone(oracle: ValuationOracle, n: int, grid_points: int) -> CheckReport:
    """Own coordinate strictly increasing, all others non-decreasing, on the grid."""
    table = grid_table(oracle, n, grid_points)
    axis = grid_axis(grid_points)
    for k in range(n):
        step = np.diff(table, axis=k)
        bad = step <= 0 if k == oracle.own_index else step < 0
        if bad.any():
            idx = [int(v) for v in np.argwhere(bad)[0]]
            nxt = list(idx)
            nxt[k] += 1
            return CheckReport(False, grid_points, {
                "coordinate": k,
                "profile": _profile(axis, idx),
                "next_profile": _profile(axis, nxt),
            })
    return CheckReport(True, grid_points)


# --------------------------------------------------------------------------- fixtures


def build_instance(specs: Sequence[tuple[str, Mapping[str, Any]]], signals: Sequence[float]) -> Instance:
    """Instance from ``(family, params)`` pairs, with dependencies declared automatically."""
    n = len(specs)
    return Instance(tuple(make_oracle(f, p, i, n) for i, (f, p) in enumerate(specs)), tuple(signals))


def alice_bob(eps: float = DEFAULT_EPS) -> Instance:
    """Two identical product valuations, both signals at 1."""
    return build_instance([("product", {"eps": eps})] * 2, (1.0, 1.0))


def alice_bob_deviation(eps: float = DEFAULT_EPS) -> Instance:
    """Bob's manipulation: ``v_B = 0.5 + s_B`` with Bob's signal lowered to 0."""
    return build_instance([("product", {"eps": eps}), ("affine_own", {"a": 0.5, "b": 1.0})], (1.0, 0.0))


def carl_daphne(alpha: float = 100.0, s_c: float = 1.0, s_d: float = 1.0, eps: float = DEFAULT_EPS) -> Instance:
    """Only Carl (agent 0) is informed; Daphne's value is ``alpha * s_C``."""
    return build_instance(
        [("affine_own", {"a": 1.0, "b": 1.0}), ("weighted_sum", {"weights": [float(alpha), eps]})],
        (s_c, s_d),
    )


def sc_case1(n: int, eps: float = DEFAULT_EPS) -> Instance:
    return build_instance([("product", {"eps": eps})] * n, (1.0,) * n)


def sc_case2(n: int, eps: float = DEFAULT_EPS) -> Instance:
    specs = [("affine_own", {"a": 0.5, "b": 1.0})] + [("product", {"eps": eps})] * (n - 1)
    return build_instance(specs, (0.0,) + (1.0,) * (n - 1))


def kdep_lb1(n: int, k: int, zeroed: int | None = 0, eps: float = DEFAULT_EPS) -> Instance:
    """Public-valuation lower-bound instance for k-bounded dependency.

    Agents ``0..k`` value the product of the other members' signals; the rest
    are ``eps * s_i``. ``zeroed`` picks the profile with that agent's signal at 0.
    """
    if not 0 <= k < n:
        raise ValueError("need 0 <= k < n")
    core = list(range(k + 1))
    specs = [
        ("product", {"members": [j for j in core if j != i], "eps": eps}) if i <= k else ("affine_own", {"a": 0.0, "b": eps})
        for i in range(n)
    ]
    signals = [1.0] * n
    if zeroed is not None:
        if not 0 <= zeroed <= k:
            raise ValueError("zeroed must be one of the first k+1 agents")
        signals[zeroed] = 0.0
    return build_instance(specs, signals)


def kdep_lb2(n: int, k: int, case: int = 2, eps: float = DEFAULT_EPS) -> Instance:
    """Private single-crossing lower-bound instance for k-bounded dependency."""
    if not 0 <= k < n:
        raise ValueError("need 0 <= k < n")
    core = list(range(k + 1))
    specs = [
        ("product", {"members": core, "eps": eps}) if i <= k else ("affine_own", {"a": 0.0, "b": eps})
        for i in range(n)
    ]
    signals = [1.0] * n
    if case == 2:
        specs[0] = ("affine_own", {"a": 0.5, "b": 1.0})
        signals[0] = 0.0
    elif case != 1:
        raise ValueError("case must be 1 or 2")
    return build_instance(specs, signals)


FIXTURES: dict[str, Callable[..., Instance]] = {
    "alice_bob": alice_bob,
    "alice_bob_deviation": alice_bob_deviation,
    "carl_daphne": carl_daphne,
    "sc_case1": sc_case1,
    "sc_case2": sc_case2,
    "kdep_lb1": kdep_lb1,
    "kdep_lb2": kdep_lb2,
}


def fixture(name: str, **kwargs: Any) -> Instance:
    try:
        build = FIXTURES[name]
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return build(**kwargs)
