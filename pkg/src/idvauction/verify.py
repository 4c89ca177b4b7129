"""Property checks for mechanisms: EPIC, IR, characterization, welfare, queries.

Checks report failures with a replayable witness instead of raising. The
``Mechanism`` objects used here expose ``agent_outcome(instance, i)`` returning
``(x_i, p_i)``, ``run(instance)`` and optionally ``step_function(instance, i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol, Sequence

from .core import Instance, MechanismOutcome, QueryLedger, ValuationOracle
from .kdep_mech import KdepMechanism, build_dependency_graph
from .sos_mech import SosConfig, SosMechanism, compute_d_set, level, welfare_certificate
from .stepfn import StepFunction
from .valuations import make_oracle

EPIC_TOL = 1e-9
IR_TOL = 1e-12
FEASIBILITY_TOL = 1e-12


class Mechanism(Protocol):
    name: str

    def agent_outcome(self, instance: Instance, i: int, ledger: QueryLedger | None = None) -> tuple[float, float]: ...

    def run(self, instance: Instance, ledger: QueryLedger | None = None) -> MechanismOutcome: ...


# --------------------------------------------------------------------------- deviations


def retarget(oracle: ValuationOracle, profile: tuple, target: float) -> ValuationOracle:
    """Rescaled copy of ``oracle`` whose value at ``profile`` is exactly ``target``."""
    if not target > 0:
        raise ValueError("target must be positive")
    base = {"family": oracle.family, "params": oracle.to_dict()["params"]}
    anchor = oracle(profile)
    scale = target / anchor if anchor > 0 else 1.0
    shift = target - scale * anchor
    for _ in range(8):
        out = ValuationOracle("transformed", {"base": base, "scale": scale, "shift": shift}, oracle.own_index, oracle.deps)
        got = out(profile)
        if got == target:
            return out
        shift += target - got
    raise ArithmeticError(f"could not pin value {target!r} at {profile}")


@dataclass(frozen=True)
class Transform:
    """A way to misreport a valuation function.

    ``scale``/``shift`` rescale the true function, ``swap`` reports an
    unrelated weighted sum, ``target`` reports a rescaling whose value at the
    deviating profile is ``amount * v_i(s)`` (``amount=1`` preserves the value).
    """

    kind: str
    amount: float = 1.0

    def apply(self, instance: Instance, i: int, signal: float) -> ValuationOracle:
        true = instance.oracles[i]
        base = {"family": true.family, "params": true.to_dict()["params"]}
        if self.kind == "identity":
            return true
        if self.kind == "scale":
            return ValuationOracle("transformed", {"base": base, "scale": self.amount}, i, true.deps)
        if self.kind == "shift":
            return ValuationOracle("transformed", {"base": base, "shift": self.amount}, i, true.deps)
        if self.kind == "swap":
            return make_oracle("weighted_sum", {"weights": [self.amount] * instance.n}, i, instance.n)
        if self.kind == "target":
            profile = instance.signals[:i] + (float(signal),) + instance.signals[i + 1:]
            return retarget(true, profile, self.amount * true(instance.signals))
        raise ValueError(f"unknown transform {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "amount": self.amount}


DEFAULT_TRANSFORMS = (
    Transform("identity"),
    Transform("scale", 0.5),
    Transform("scale", 2.0),
    Transform("shift", 0.25),
    Transform("swap", 1.0),
    Transform("target", 1.0),
    Transform("target", 0.5),
    Transform("target", 1.5),
)


@dataclass(frozen=True)
class DeviationSpec:
    signal_grid: tuple[float, ...] = tuple(k / 10 for k in range(11))
    transforms: tuple[Transform, ...] = DEFAULT_TRANSFORMS
    probe_breakpoints: bool = True


@dataclass
class VerificationReport:
    prop: str
    passed: bool
    worst_violation: float = 0.0
    checked: int = 0
    witness: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "property": self.prop,
            "passed": self.passed,
            "worst_violation": self.worst_violation,
            "checked": self.checked,
            "witness": self.witness,
        }

    def absorb(self, other: VerificationReport) -> None:
        self.checked += other.checked
        if other.worst_violation > self.worst_violation:
            self.worst_violation = other.worst_violation
            self.witness = other.witness
        self.passed = self.passed and other.passed


def _deviations(instance: Instance, i: int, mechanism: Mechanism, spec: DeviationSpec) -> Iterable[tuple[float, ValuationOracle]]:
    for signal in spec.signal_grid:
        for t in spec.transforms:
            yield signal, t.apply(instance, i, signal)
    if spec.probe_breakpoints and hasattr(mechanism, "step_function") and instance.n > 1:
        true = instance.oracles[i]
        for b in mechanism.step_function(instance, i).breakpoints:
            for target in (b, b * (1 - 1e-9), b * (1 + 1e-9)):
                if target > 0:
                    for signal in (instance.signals[i], 0.0):
                        profile = instance.signals[:i] + (signal,) + instance.signals[i + 1:]
                        yield signal, retarget(true, profile, target)


def check_epic(instance: Instance, mechanism: Mechanism, spec: DeviationSpec = DeviationSpec(), tol: float = EPIC_TOL) -> VerificationReport:
    """Truthful utility must beat every sampled ``(v'_i, s'_i)`` misreport up to ``tol``."""
    report = VerificationReport("epic", True)
    for i in range(instance.n):
        value = instance.value(i)
        x, p = mechanism.agent_outcome(instance, i)
        truthful = value * x - p
        for signal, oracle in _deviations(instance, i, mechanism, spec):
            dx, dp = mechanism.agent_outcome(instance.replace_agent(i, oracle, signal), i)
            gain = (value * dx - dp) - truthful
            report.checked += 1
            if gain > report.worst_violation:
                report.worst_violation = gain
                report.witness = {
                    "instance": instance.to_dict(),
                    "agent": i,
                    "signal": signal,
                    "oracle": oracle.to_dict(),
                    "truthful_utility": truthful,
                    "deviating_utility": value * dx - dp,
                }
            if gain > tol:
                report.passed = False
    return report


def replay_epic_witness(witness: dict[str, Any], mechanism: Mechanism) -> tuple[float, float]:
    """Recompute ``(truthful_utility, deviating_utility)`` from a serialized witness."""
    instance = Instance.from_dict(witness["instance"])
    i = witness["agent"]
    oracle = ValuationOracle.from_dict(witness["oracle"], i)
    value = instance.value(i)
    x, p = mechanism.agent_outcome(instance, i)
    dx, dp = mechanism.agent_outcome(instance.replace_agent(i, oracle, witness["signal"]), i)
    return value * x - p, value * dx - dp


def check_ir(instance: Instance, mechanism: Mechanism, tol: float = IR_TOL) -> VerificationReport:
    report = VerificationReport("ir", True)
    for i in range(instance.n):
        x, p = mechanism.agent_outcome(instance, i)
        utility = instance.value(i) * x - p
        report.checked += 1
        if -utility > report.worst_violation:
            report.worst_violation = -utility
            report.witness = {"instance": instance.to_dict(), "agent": i, "x": x, "p": p, "utility": utility}
        if utility < -tol:
            report.passed = False
    return report


def check_feasibility(instance: Instance, mechanism: Mechanism, tol: float = FEASIBILITY_TOL, strict: bool = False) -> VerificationReport:
    out = mechanism.run(instance)
    total = math.fsum(out.x)
    ok = total < 1.0 if strict else total <= 1.0 + tol
    excess = max(0.0, total - 1.0)
    witness = None if ok else {"instance": instance.to_dict(), "x": out.x, "sum_x": total}
    return VerificationReport("feasibility", ok, excess, 1, witness)


def value_sweep(instance: Instance, mechanism: Mechanism, i: int, points: int = 21) -> list[tuple[float, float]]:
    """``(w, x_i)`` for reports of agent ``i`` hitting value ``w`` on a grid."""
    breaks: tuple[float, ...] = ()
    if hasattr(mechanism, "step_function") and instance.n > 1:
        breaks = mechanism.step_function(instance, i).breakpoints
    top = max([*instance.values(), *breaks])
    top = 1.5 * top if top > 0 else 1.0
    grid = {top * k / points for k in range(1, points + 1)}
    for b in breaks:
        grid.update({b * (1 - 1e-9), b, math.nextafter(b, math.inf)})
    profile = instance.signals
    true = instance.oracles[i]
    out = []
    for w in sorted(v for v in grid if v > 0):
        dev = instance.replace_agent(i, retarget(true, profile, w), profile[i])
        out.append((w, mechanism.agent_outcome(dev, i)[0]))
    return out


def check_characterization(instance: Instance, mechanism: Mechanism, i: int, substitutions: int = 5, sweep_points: int = 21) -> VerificationReport:
    """(a) equal-value misreports leave ``(x_i, p_i)`` bitwise unchanged;
    (b) ``x_i`` is non-decreasing along a sweep of reported values."""
    report = VerificationReport("characterization", True)
    value = instance.value(i)
    truthful = mechanism.agent_outcome(instance, i)
    if value > 0:
        ones = make_oracle("weighted_sum", {"weights": [1.0] * instance.n}, i, instance.n)
        bases = [instance.oracles[i], ones]
        for k in range(substitutions):
            signal = k / max(substitutions - 1, 1)
            profile = instance.signals[:i] + (signal,) + instance.signals[i + 1:]
            oracle = retarget(bases[k % 2], profile, value)
            got = mechanism.agent_outcome(instance.replace_agent(i, oracle, signal), i)
            report.checked += 1
            if got != truthful:
                report.passed = False
                report.worst_violation = max(report.worst_violation, abs(got[0] - truthful[0]), abs(got[1] - truthful[1]))
                report.witness = {"instance": instance.to_dict(), "agent": i, "signal": signal,
                                  "oracle": oracle.to_dict(), "truthful": list(truthful), "substituted": list(got)}
    sweep = value_sweep(instance, mechanism, i, sweep_points)
    for (w0, x0), (w1, x1) in zip(sweep, sweep[1:]):
        report.checked += 1
        if x1 < x0:
            report.passed = False
            report.worst_violation = max(report.worst_violation, x0 - x1)
            report.witness = {"instance": instance.to_dict(), "agent": i, "values": [w0, w1], "x": [x0, x1]}
    return report


@dataclass
class WelfareReport:
    expected_welfare: float
    opt: float
    ratio: float
    bound: float
    holds: bool
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "expected_welfare": self.expected_welfare,
            "opt": self.opt,
            "ratio": self.ratio,
            "bound": self.bound,
            "holds": self.holds,
            **self.details,
        }


def welfare_bound(instance: Instance, mechanism: Mechanism) -> tuple[float, dict[str, Any]]:
    """Guaranteed welfare ratio for this instance and its supporting data."""
    if instance.n == 1:
        return 1.0, {}
    if isinstance(mechanism, SosMechanism):
        cert = welfare_certificate(instance, mechanism.config)
        ratio = cert.lower_bound / cert.opt if cert.opt > 0 else 0.0
        return ratio, {"k_star": cert.k_star}
    if isinstance(mechanism, KdepMechanism):
        k = build_dependency_graph(instance).k
        return 1.0 / (2 * (k + 1)), {"k": k}
    return 0.0, {}


def measure_welfare(instance: Instance, mechanism: Mechanism, outcome: MechanismOutcome | None = None) -> WelfareReport:
    out = mechanism.run(instance) if outcome is None else outcome
    values = instance.values()
    welfare = math.fsum(x * v for x, v in zip(out.x, values))
    opt = max(values)
    ratio = welfare / opt if opt > 0 else 1.0
    bound, details = welfare_bound(instance, mechanism)
    return WelfareReport(welfare, opt, ratio, bound, ratio >= bound * (1 - 1e-12), details)


def query_limit(mechanism: Mechanism, n: int) -> int:
    if n == 1:
        return 1
    return n if isinstance(mechanism, KdepMechanism) else 2 * n - 1


def audit_queries(instance: Instance, mechanism: Mechanism, outcome: MechanismOutcome | None = None) -> VerificationReport:
    """Distinct oracle queries per agent for a full run (allocation and payments)."""
    out = mechanism.run(instance) if outcome is None else outcome
    counts = out.ledger.counts(instance.n)
    limit = query_limit(mechanism, instance.n)
    worst = max(counts)
    ok = worst <= limit
    witness = None if ok else {"instance": instance.to_dict(), "counts": counts, "limit": limit}
    return VerificationReport("queries", ok, float(max(0, worst - limit)), instance.n, witness)


# --------------------------------------------------------------------------- mutants


class _UncheckedStep(StepFunction):
    def _check_order(self, levels):
        pass


class NonMonotoneSos(SosMechanism):
    """Broken: probability grows with the number of rivals in ``D_i``."""

    name = "sos-nonmonotone"

    def step_function(self, instance, i, ledger=None):
        n = instance.n
        chi = self.config.chi_for(n)
        cutoffs = list(compute_d_set(instance, i, 0.0, ledger).cutoffs.values())
        return _UncheckedStep.from_thresholds(cutoffs, lambda w: level(n, chi, n - 1 - sum(c >= w for c in cutoffs)))


class SurchargeSos(SosMechanism):
    """Broken: payments carry a constant surcharge per unit of allocation."""

    name = "sos-surcharge"

    def __init__(self, config: SosConfig = SosConfig(), surcharge: float = 0.1) -> None:
        super().__init__(config)
        self.surcharge = surcharge

    def agent_outcome(self, instance, i, ledger=None):
        x, p = super().agent_outcome(instance, i, ledger)
        return x, p + self.surcharge * x

    def run(self, instance, ledger=None):
        out = super().run(instance, ledger)
        out.p = [p + self.surcharge * x for x, p in zip(out.x, out.p)]
        return out


class FlatFeeSos(SurchargeSos):
    """Broken: every agent pays a fixed fee whatever happens.

    The fee shifts all of an agent's utilities equally, so no deviation
    reveals it; only the IR check does.
    """

    name = "sos-flat-fee"

    def agent_outcome(self, instance, i, ledger=None):
        x, p = SosMechanism.agent_outcome(self, instance, i, ledger)
        return x, p + self.surcharge

    def run(self, instance, ledger=None):
        out = SosMechanism.run(self, instance, ledger)
        out.p = [p + self.surcharge for p in out.p]
        return out


class SignalPeekingSos(SosMechanism):
    """Broken: ``D_i`` compares rivals' values at the reported ``s_i`` instead of ``s_i = 1``."""

    name = "sos-peeking"

    def step_function(self, instance, i, ledger=None):
        ledger = QueryLedger() if ledger is None else ledger
        n = instance.n
        chi = self.config.chi_for(n)
        result = compute_d_set(instance, i, 0.0, ledger)
        cutoffs = []
        for j in result.cutoffs:
            at_s = ledger.query(instance.oracles[j], instance.signals)
            cutoffs.append(min(at_s, result.cutoffs[j]))
        return StepFunction.from_thresholds(cutoffs, lambda w: level(n, chi, sum(c >= w for c in cutoffs)))

    def run(self, instance, ledger=None):
        ledger = QueryLedger() if ledger is None else ledger
        x, p = zip(*(self.agent_outcome(instance, i, ledger) for i in range(instance.n)))
        return MechanismOutcome(list(x), list(p), ledger, {"values": instance.values(ledger)})


MECHANISMS = {
    "sos": SosMechanism,
    "kdep": KdepMechanism,
    "sos-nonmonotone": NonMonotoneSos,
    "sos-surcharge": SurchargeSos,
    "sos-peeking": SignalPeekingSos,
    "sos-flat-fee": FlatFeeSos,
}
MUTANTS = ("sos-nonmonotone", "sos-surcharge", "sos-peeking")


def get_mechanism(name: str, chi: float | None = None, d: float = 1.0) -> Mechanism:
    try:
        cls = MECHANISMS[name]
    except KeyError:
        raise ValueError(f"unknown mechanism {name!r}; choose from {sorted(MECHANISMS)}") from None
    if cls is KdepMechanism:
        return cls()
    return cls(SosConfig(chi=chi, d=d))


def check_all(instances: Sequence[Instance], mechanism: Mechanism, spec: DeviationSpec = DeviationSpec(),
              epic_tol: float = EPIC_TOL, ir_tol: float = IR_TOL) -> dict[str, VerificationReport]:
    """Every property over a batch; the per-property report keeps the worst witness."""
    strict = isinstance(mechanism, KdepMechanism)
    totals = {name: VerificationReport(name, True) for name in
              ("feasibility", "epic", "ir", "characterization", "welfare", "queries")}
    for inst in instances:
        out = mechanism.run(inst)
        totals["feasibility"].absorb(check_feasibility(inst, mechanism, strict=strict))
        totals["epic"].absorb(check_epic(inst, mechanism, spec, epic_tol))
        totals["ir"].absorb(check_ir(inst, mechanism, ir_tol))
        for i in range(inst.n):
            totals["characterization"].absorb(check_characterization(inst, mechanism, i))
        w = measure_welfare(inst, mechanism, out)
        shortfall = max(0.0, w.bound - w.ratio)
        witness = None if w.holds else {"instance": inst.to_dict(), **w.to_dict()}
        totals["welfare"].absorb(VerificationReport("welfare", w.holds, shortfall, 1, witness))
        totals["queries"].absorb(audit_queries(inst, mechanism, out))
    return totals
