"""Randomized EPIC-IR mechanism for valuations that are submodular over signals.

Agent ``i`` is allocated with probability ``1 / (chi (ln n + 1) (|D_i| + 1))``
where ``D_i`` collects the rivals whose value, with ``s_i`` pushed to 1, is at
least ``v_i(s)`` and whose value with ``s_i`` pushed to 0 is at least
``(1 - 1/log2 n) v_i(s)``. ``D_i`` never looks at ``s_i`` or ``v_i``, so the
allocation of ``i`` is a monotone step function of the single number
``v_i(s)`` and the threshold payment makes the mechanism truthful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import Instance, MechanismOutcome, QueryLedger, substitute
from .stepfn import StepFunction


@dataclass(frozen=True)
class SosConfig:
    """``chi`` defaults to ``2 d log2(n) + 1``; ``d`` is the d-SOS factor."""

    chi: float | None = None
    d: float = 1.0

    def __post_init__(self) -> None:
        if self.chi is not None and not self.chi >= 1:
            raise ValueError("chi must be at least 1")
        if not self.d >= 1:
            raise ValueError("d must be at least 1")

    def chi_for(self, n: int) -> float:
        if self.chi is not None:
            return float(self.chi)
        return 2.0 * self.d * math.log2(n) + 1.0


def shrink_factor(n: int) -> float:
    """``1 - 1/log2 n``; zero at n = 2."""
    return 1.0 - 1.0 / math.log2(n)


def level(n: int, chi: float, d_size: int) -> float:
    return 1.0 / (chi * (math.log(n) + 1.0) * (d_size + 1))


def _largest_scaled_below(bound: float, factor: float) -> float:
    """Largest float ``w`` with ``factor * w <= bound`` (in floating point)."""
    if factor <= 0.0:
        return math.inf
    w = bound / factor
    while factor * w > bound:
        w = math.nextafter(w, -math.inf)
    while factor * math.nextafter(w, math.inf) <= bound:
        w = math.nextafter(w, math.inf)
    return w


@dataclass
class DSetResult:
    members: frozenset[int]
    cutoffs: dict[int, float]
    high: dict[int, float] = field(repr=False)
    low: dict[int, float] = field(repr=False)


def rival_bounds(instance: Instance, i: int, ledger: QueryLedger | None = None) -> tuple[dict[int, float], dict[int, float]]:
    """``v_j(1_i, s_-i)`` and ``v_j(0_i, s_-i)`` for every rival ``j``."""
    ledger = QueryLedger() if ledger is None else ledger
    top = substitute(instance.signals, i, 1.0)
    bottom = substitute(instance.signals, i, 0.0)
    high, low = {}, {}
    for j, oracle in enumerate(instance.oracles):
        if j != i:
            high[j] = ledger.query(oracle, top)
            low[j] = ledger.query(oracle, bottom)
    return high, low


def compute_d_set(instance: Instance, i: int, w: float, ledger: QueryLedger | None = None) -> DSetResult:
    """Rivals counted against agent ``i`` when ``i``'s value is ``w``.

    ``cutoffs[j]`` is the largest ``w`` for which ``j`` is a member, so
    membership is exactly ``w <= cutoffs[j]``.
    """
    n = instance.n
    if n < 2:
        raise ValueError("D sets are defined for n >= 2")
    if w < 0:
        raise ValueError("candidate value must be non-negative")
    f = shrink_factor(n)
    high, low = rival_bounds(instance, i, ledger)
    members = frozenset(j for j in high if high[j] >= w and low[j] >= f * w)
    cutoffs = {j: min(high[j], _largest_scaled_below(low[j], f)) for j in high}
    return DSetResult(members, cutoffs, high, low)


def allocation_step_function(instance: Instance, i: int, config: SosConfig = SosConfig(), ledger: QueryLedger | None = None) -> StepFunction:
    """``x_i`` as a function of ``i``'s value, holding the rivals' reports fixed."""
    n = instance.n
    chi = config.chi_for(n)
    cutoffs = list(compute_d_set(instance, i, 0.0, ledger).cutoffs.values())
    return StepFunction.from_thresholds(cutoffs, lambda w: level(n, chi, sum(c >= w for c in cutoffs)))


def payment(instance: Instance, i: int, config: SosConfig = SosConfig(), ledger: QueryLedger | None = None) -> float:
    if instance.n == 1:
        return 0.0
    ledger = QueryLedger() if ledger is None else ledger
    value = instance.value(i, ledger)
    return allocation_step_function(instance, i, config, ledger).payment(value)


def allocate(instance: Instance, config: SosConfig = SosConfig(), ledger: QueryLedger | None = None) -> MechanismOutcome:
    """Allocation probabilities only (payments left at zero)."""
    ledger = QueryLedger() if ledger is None else ledger
    n = instance.n
    if n == 1:
        instance.value(0, ledger)
        return MechanismOutcome([1.0], [0.0], ledger, {"chi": None, "d_sizes": [0]})
    chi = config.chi_for(n)
    sizes = []
    for i in range(n):
        sizes.append(len(compute_d_set(instance, i, instance.value(i, ledger), ledger).members))
    x = [level(n, chi, k) for k in sizes]
    return MechanismOutcome(x, [0.0] * n, ledger, {"chi": chi, "d_sizes": sizes})


class SosMechanism:
    """Allocation plus threshold payments, usable by the verification harness."""

    name = "sos"

    def __init__(self, config: SosConfig = SosConfig()) -> None:
        self.config = config

    def step_function(self, instance: Instance, i: int, ledger: QueryLedger | None = None) -> StepFunction:
        return allocation_step_function(instance, i, self.config, ledger)

    def agent_outcome(self, instance: Instance, i: int, ledger: QueryLedger | None = None) -> tuple[float, float]:
        ledger = QueryLedger() if ledger is None else ledger
        if instance.n == 1:
            instance.value(0, ledger)
            return 1.0, 0.0
        value = instance.value(i, ledger)
        curve = self.step_function(instance, i, ledger)
        return curve(value), curve.payment(value)

    def run(self, instance: Instance, ledger: QueryLedger | None = None) -> MechanismOutcome:
        ledger = QueryLedger() if ledger is None else ledger
        out = allocate(instance, self.config, ledger)
        if instance.n > 1:
            out.p = [payment(instance, i, self.config, ledger) for i in range(instance.n)]
        out.diagnostics["values"] = instance.values(ledger)
        return out


def run(instance: Instance, config: SosConfig = SosConfig()) -> MechanismOutcome:
    return SosMechanism(config).run(instance)


@dataclass
class WelfareCertificate:
    opt: float
    k_star: int
    T_kstar: float
    levels: list[int | None]
    counts: list[int]
    y: list[float]
    lower_bound: float

    def to_dict(self) -> dict:
        return {
            "opt": self.opt,
            "k_star": self.k_star,
            "T_kstar": self.T_kstar,
            "levels": self.levels,
            "counts": self.counts,
            "y": self.y,
            "lower_bound": self.lower_bound,
        }


def _value_level(value: float, opt: float, f: float) -> int | None:
    """Smallest ``l`` with ``value >= opt * f**l``; None for a zero value."""
    if value >= opt:
        return 0
    if value <= 0.0:
        return None
    if f == 0.0:
        return 1
    guess = max(1, int(math.log(value / opt) / math.log(f)) - 1)
    while guess > 1 and value >= opt * f ** (guess - 1):
        guess -= 1
    while value < opt * f**guess:
        guess += 1
    return guess


def welfare_certificate(instance: Instance, config: SosConfig = SosConfig(), ledger: QueryLedger | None = None) -> WelfareCertificate:
    """Geometric value thresholds, proxy probabilities ``y`` and the welfare lower bound."""
    n = instance.n
    if n < 2:
        raise ValueError("the certificate is defined for n >= 2")
    ledger = QueryLedger() if ledger is None else ledger
    chi = config.chi_for(n)
    f = shrink_factor(n)
    values = instance.values(ledger)
    opt = max(values)
    if opt <= 0.0:
        return WelfareCertificate(opt, 0, 0.0, [None] * n, [0], [level(n, chi, n - 1)] * n, 0.0)

    def threshold(l: int | None) -> float:
        return 0.0 if l is None else opt * f**l

    levels = [_value_level(v, opt, f) for v in values]
    y = []
    for i in range(n):
        high, low = rival_bounds(instance, i, ledger)
        upper, lower = threshold(levels[i]), threshold(None if levels[i] is None else levels[i] + 1)
        e_size = sum(1 for j in high if high[j] >= upper and low[j] >= lower)
        y.append(level(n, chi, e_size))

    top = max(l for l in levels if l is not None)
    counts = [0] * (top + 2)
    for l in levels:
        if l is not None:
            counts[l] += 1
    k_star, above = 0, counts[0]
    while counts[k_star + 1] >= above:
        k_star += 1
        above += counts[k_star]
    bound = f**k_star / (2.0 * chi * (math.log(n) + 1.0)) * opt
    return WelfareCertificate(opt, k_star, threshold(k_star), levels, counts, y, bound)
